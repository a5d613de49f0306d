fn main() {
    std::process::exit(geohom::cli_run());
}
