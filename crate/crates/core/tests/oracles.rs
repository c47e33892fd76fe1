//! Independent dense-algebra oracles on tiny problems.

use nalgebra::{DMatrix, DVector};

use infomesh::fem::{assemble_coupling, assemble_operator, factorize, load_vector, Quadrature};
use infomesh::information::fisher_diag;
use infomesh::inverse::{assemble_schur, fisher_forward_route, measurement_adjoints, recover_state_adjoint, solve_map};
use infomesh::spectrum::eigenvalues;
use infomesh::{MeasurementSet, QuadtreeMesh, UniformGrid};

struct Tiny {
    grid: UniformGrid,
    mesh: QuadtreeMesh,
    ms: MeasurementSet,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    m: DMatrix<f64>,
    w: Vec<f64>,
    beta: f64,
}

/// 9x9 nodes, 4 leaves, dense copies of every operator.
fn tiny(points: Vec<[f64; 2]>, sigma: Vec<f64>, beta: f64) -> Tiny {
    let grid = UniformGrid::from_levels(3);
    let mesh = QuadtreeMesh::uniform(1, 3).unwrap();
    let ms = MeasurementSet::new(points, sigma).unwrap();
    let a = assemble_operator(&grid, 1.0, [20.0, 5.0]).unwrap().to_dense();
    let b = assemble_coupling(&grid, &mesh).unwrap().to_dense(true);
    let mut m = DMatrix::zeros(ms.len(), grid.node_count());
    for l in 0..ms.len() {
        for (i, v) in ms.constrained_eval(&grid, l).unwrap() {
            m[(l, i)] = v;
        }
    }
    let w = ms.weights();
    Tiny {
        grid,
        mesh,
        ms,
        a,
        b,
        m,
        w,
        beta,
    }
}

impl Tiny {
    fn c(&self) -> DMatrix<f64> {
        self.m.transpose() * DMatrix::from_diagonal(&DVector::from_vec(self.w.clone())) * &self.m
    }

    fn n(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.mesh.areas()))
    }

    /// `B^T A^{-T} C A^{-1} B + beta N` with explicit inverses.
    fn triple_product(&self) -> DMatrix<f64> {
        let ainv = self.a.clone().try_inverse().unwrap();
        self.b.transpose() * ainv.transpose() * self.c() * &ainv * &self.b + self.n() * self.beta
    }
}

#[test]
fn schur_matches_triple_product() {
    let t = tiny(vec![[0.3, 0.1], [-0.4, -0.2]], vec![0.2, 0.5], 3.0);
    let f = factorize(&assemble_operator(&t.grid, 1.0, [20.0, 5.0]).unwrap()).unwrap();
    let adj = measurement_adjoints(&f, &t.ms).unwrap();
    let bm = assemble_coupling(&t.grid, &t.mesh).unwrap();
    let sys = assemble_schur(&adj, &bm, &t.ms, t.beta, &t.mesh).unwrap();
    let oracle = t.triple_product();
    assert!((sys.h() - &oracle).amax() <= 1e-9 * oracle.amax());
    let q = fisher_diag(&sys);
    for k in 0..4 {
        assert!((q[k] - oracle[(k, k)]).abs() <= 1e-10 * oracle[(k, k)]);
        let fwd = fisher_forward_route(&f, &bm, &t.ms, t.beta, &t.mesh, k).unwrap();
        assert!((fwd - oracle[(k, k)]).abs() <= 1e-10 * oracle[(k, k)]);
    }
}

#[test]
fn single_detector_diagonal() {
    let t = tiny(vec![[0.1, 0.35]], vec![0.05], 1.0);
    let f = factorize(&assemble_operator(&t.grid, 1.0, [20.0, 5.0]).unwrap()).unwrap();
    let adj = measurement_adjoints(&f, &t.ms).unwrap();
    let bm = assemble_coupling(&t.grid, &t.mesh).unwrap();
    let sys = assemble_schur(&adj, &bm, &t.ms, t.beta, &t.mesh).unwrap();
    let oracle = t.triple_product();
    for (k, q) in fisher_diag(&sys).iter().enumerate() {
        assert!((q - oracle[(k, k)]).abs() <= 1e-10 * oracle[(k, k)]);
    }
}

#[test]
fn reduced_solve_matches_monolithic_kkt() {
    let t = tiny(vec![[0.3, 0.1], [-0.4, -0.2], [0.55, -0.6]], vec![0.2, 0.5, 0.1], 0.7);
    let z = vec![0.013, -0.002, 0.021];
    let ms = t.ms.clone().with_values(z.clone()).unwrap();
    let (n, k) = (t.grid.node_count(), t.mesh.len());

    // [ A    0    -B     ] [U]   [0  ]
    // [ C    A^T   0     ] [L] = [c_z]
    // [ 0   -B^T   bN    ] [P]   [0  ]
    let mut kkt = DMatrix::zeros(2 * n + k, 2 * n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&t.a);
    kkt.view_mut((0, 2 * n), (n, k)).copy_from(&(-&t.b));
    kkt.view_mut((n, 0), (n, n)).copy_from(&t.c());
    kkt.view_mut((n, n), (n, n)).copy_from(&t.a.transpose());
    kkt.view_mut((2 * n, n), (k, n)).copy_from(&(-t.b.transpose()));
    kkt.view_mut((2 * n, 2 * n), (k, k)).copy_from(&(t.n() * t.beta));
    let mut rhs = DVector::zeros(2 * n + k);
    let wz = DVector::from_iterator(z.len(), z.iter().zip(&t.w).map(|(z, w)| z * w));
    rhs.rows_mut(n, n).copy_from(&(t.m.transpose() * wz));
    let sol = kkt.lu().solve(&rhs).unwrap();

    let f = factorize(&assemble_operator(&t.grid, 1.0, [20.0, 5.0]).unwrap()).unwrap();
    let adj = measurement_adjoints(&f, &ms).unwrap();
    let bm = assemble_coupling(&t.grid, &t.mesh).unwrap();
    let sys = assemble_schur(&adj, &bm, &ms, t.beta, &t.mesh).unwrap();
    let p = solve_map(&sys, &z).unwrap();
    let (u, lam) = recover_state_adjoint(&f, &bm, p.values(), &ms).unwrap();

    let close = |x: &[f64], y: nalgebra::DVectorView<f64>| {
        let scale = y.amax();
        x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() <= 1e-8 * scale)
    };
    assert!(close(p.values(), sol.rows(2 * n, k)));
    assert!(close(u.values(), sol.rows(0, n)));
    assert!(close(lam.values(), sol.rows(n, n)));

    // third optimality equation
    let bnp: Vec<f64> = (0..k).map(|i| t.beta * t.mesh.leaf(i).area() * p.values()[i]).collect();
    let btl = bm.transpose_apply(lam.values());
    let res: f64 = bnp.iter().zip(&btl).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = bnp.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(res <= 1e-8 * norm);
}

/// Closed-form eigenvalues of a symmetric 3x3 matrix from the roots of its
/// characteristic cubic (trigonometric form).
fn cubic_eigenvalues(a: &DMatrix<f64>) -> [f64; 3] {
    let q = a.trace() / 3.0;
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let bm = (a - DMatrix::identity(3, 3) * q) / p;
    let r = (bm.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [e1, 3.0 * q - e1 - e3, e3]
}

#[test]
fn eigenvalues_match_cubic_roots() {
    let t = tiny(vec![[0.3, 0.1], [-0.4, -0.2]], vec![0.02, 0.05], 3.0);
    let h = t.triple_product();
    let sub = h.view((0, 0), (3, 3)).into_owned();
    let s = eigenvalues(&sub).unwrap();
    let roots = cubic_eigenvalues(&sub);
    for (x, y) in s.values.iter().zip(roots) {
        assert!((x - y).abs() <= 1e-10 * roots[0], "{x} vs {y}");
    }
    let trace: f64 = s.values.iter().sum();
    assert!((trace - sub.trace()).abs() <= 1e-12 * trace);
}

#[test]
fn bilinear_convergence_is_second_order() {
    let pi = std::f64::consts::PI;
    let wind = [10.0, 0.0];
    let exact = |x: f64, y: f64| (pi * x).sin() * (pi * y).sin();
    let source = move |x: f64, y: f64| {
        wind[0] * pi * (pi * x).cos() * (pi * y).sin() + 2.0 * pi * pi * (pi * x).sin() * (pi * y).sin()
    };
    let errors: Vec<f64> = (4..=6)
        .map(|lv| {
            let g = UniformGrid::from_levels(lv);
            let f = factorize(&assemble_operator(&g, 1.0, wind).unwrap()).unwrap();
            let u = f.solve(&load_vector(&g, source, Quadrature::Gauss(3))).unwrap();
            u.l2_error(exact)
        })
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio} from {errors:?}");
    }
}
