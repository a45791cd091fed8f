//! Small dense complex linear algebra kit on top of nalgebra.

use nalgebra::{DMatrix, Schur, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn eye(m: usize) -> CMat {
    CMat::identity(m, m)
}

pub fn cis(x: f64) -> C64 {
    C64::new(x.cos(), x.sin())
}

pub fn conj(a: &CMat) -> CMat {
    a.map(|z| z.conj())
}

/// Hilbert-Schmidt (Frobenius) norm.
pub fn hs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn gram_defect(a: &CMat) -> f64 {
    hs(&(a.adjoint() * a - eye(a.ncols())))
}

pub fn symmetry_defect(a: &CMat) -> f64 {
    hs(&(a - a.transpose()))
}

pub fn det(a: &CMat) -> C64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    a.clone().determinant()
}

/// Closest matrix with orthonormal columns (polar factor).
pub fn lowdin(a: &CMat) -> CMat {
    let svd = a.clone().svd(true, true);
    svd.u.expect("svd u") * svd.v_t.expect("svd v_t")
}

pub fn singular_values(a: &CMat) -> Vec<f64> {
    a.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
pub fn eigh(h: &CMat) -> (Vec<f64>, CMat) {
    let herm = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    sort_eig(
        eig.eigenvalues.iter().copied().collect(),
        eig.eigenvectors,
    )
}

pub fn eigh_real(s: &RMat) -> (Vec<f64>, RMat) {
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let vecs = RMat::from_fn(s.nrows(), s.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (order.iter().map(|&i| vals[i]).collect(), vecs)
}

fn sort_eig(vals: Vec<f64>, vecs: CMat) -> (Vec<f64>, CMat) {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let sorted = CMat::from_fn(vecs.nrows(), vecs.ncols(), |r, c| vecs[(r, order[c])]);
    (order.iter().map(|&i| vals[i]).collect(), sorted)
}

/// Eigen-decomposition `u = q diag(vals) q†` of a normal matrix via complex Schur.
pub fn normal_eig(u: &CMat) -> (Vec<C64>, CMat) {
    let m = u.nrows();
    if m == 1 {
        return (vec![u[(0, 0)]], eye(1));
    }
    let (q, t) = Schur::new(u.clone()).unpack();
    let q = lowdin(&q);
    let vals = (0..m).map(|j| t[(j, j)]).collect();
    (vals, q)
}

/// exp of a skew-Hermitian matrix.
pub fn expm_skew(a: &CMat) -> CMat {
    let h = a * (-I);
    let (vals, v) = eigh(&h);
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&x| cis(x)),
    ));
    &v * d * v.adjoint()
}

/// q diag(f(vals)) q†
pub fn spectral(q: &CMat, vals: impl IntoIterator<Item = C64>) -> CMat {
    let d: Vec<C64> = vals.into_iter().collect();
    let mut qd = q.clone();
    for (j, z) in d.iter().enumerate() {
        for r in 0..qd.nrows() {
            qd[(r, j)] *= *z;
        }
    }
    qd * q.adjoint()
}

/// Haar random unitary of size m.
pub fn random_unitary<R: rand::Rng + ?Sized>(m: usize, rng: &mut R) -> CMat {
    use rand_distr::{Distribution, StandardNormal};
    let g = CMat::from_fn(m, m, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..m {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..m {
            q[(i, j)] *= ph;
        }
    }
    q
}

pub fn random_hermitian<R: rand::Rng + ?Sized>(m: usize, scale: f64, rng: &mut R) -> CMat {
    use rand_distr::{Distribution, StandardNormal};
    let g = CMat::from_fn(m, m, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    (&g + g.adjoint()) * C64::new(0.5 * scale, 0.0)
}

/// Principal argument wrapped to [0, 2π).
pub fn arg_2pi(z: C64) -> f64 {
    let a = z.arg();
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lowdin_gives_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_unitary(5, &mut rng).columns(0, 3).into_owned() * C64::new(1.3, 0.2);
        assert!(gram_defect(&lowdin(&a)) < 1e-13);
    }

    #[test]
    fn normal_eig_reconstructs_unitaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in [1, 2, 3, 5, 8] {
            for _ in 0..50 {
                let u = random_unitary(m, &mut rng);
                let (vals, q) = normal_eig(&u);
                let back = spectral(&q, vals);
                assert!(hs(&(back - &u)) < 1e-12);
            }
        }
    }

    #[test]
    fn normal_eig_handles_degenerate_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_unitary(4, &mut rng);
        let d = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
            cis(0.3),
            cis(0.3),
            cis(-2.0),
            cis(0.3),
        ]));
        let u = &w * d * w.adjoint();
        let (vals, q) = normal_eig(&u);
        assert!(hs(&(spectral(&q, vals) - &u)) < 1e-12);
        let swap = CMat::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let (vals, q) = normal_eig(&swap);
        assert!(hs(&(spectral(&q, vals) - &swap)) < 1e-12);
        let (vals, q) = normal_eig(&eye(3));
        assert!(hs(&(spectral(&q, vals) - eye(3))) < 1e-14);
    }

    #[test]
    fn expm_skew_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_hermitian(4, 1.0, &mut rng) * I;
        assert!(gram_defect(&expm_skew(&a)) < 1e-13);
    }

    #[test]
    fn eigh_sorts_ascending() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_hermitian(6, 1.0, &mut rng);
        let (vals, v) = eigh(&h);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(6, vals.iter().map(|&x| C64::new(x, 0.0))));
        assert!(hs(&(&v * d * v.adjoint() - h)) < 1e-12);
    }
}
