use geohom::meshopt::*;
use geohom::Tensor2;

fn main() {
    let s = quadratic_potential(Tensor2::diag(0.1, 10.0));
    let cfg = MeshOptConfig { max_iter: 150, max_halvings: 8, ..Default::default() };
    for &n_int in &[80usize, 160, 320, 640] {
        // metric-matched boundary: dx ~ 1/sqrt(10 N), dy ~ 1/sqrt(N/10)
        let bt = ((10.0 * n_int as f64).sqrt()).round() as usize;
        let lr = ((n_int as f64 / 10.0).sqrt()).round().max(3.0) as usize;
        let pts_a = seeded_points_anisotropic(bt, lr, n_int, 5);
        let total = pts_a.len();
        let iso_side = (n_int as f64).sqrt().round() as usize;
        let n_int_iso = total - 4 * iso_side;
        let pts_i = seeded_points_anisotropic(iso_side, iso_side, n_int_iso, 5);
        assert_eq!(pts_i.len(), total);
        let out_a = optimize_mesh(&pts_a, &s, &cfg).unwrap();
        let out_i = optimize_mesh(&pts_i, &paraboloid_potential(0.5), &cfg).unwrap();
        let (l2a, h1a, ka) = interpolation_errors(&out_a.mesh, &s).unwrap();
        let (l2i, h1i, ki) = interpolation_errors(&out_i.mesh, &s).unwrap();
        println!("total {total}: aniso l2 {l2a:.4e} h1 {h1a:.4e} k {ka:.3e} | iso l2 {l2i:.4e} h1 {h1i:.4e} k {ki:.3e} | factors {:.2} {:.2} {:.2}",
            l2i/l2a, h1i/h1a, ki/ka);
    }
}
