//! Finite-dimensional generators in standard form and their structure checks.
//!
//! Maps act on `d x d` matrices in the Heisenberg picture:
//!
//! ```text
//! L[X] = sum_k L_k* X L_k - K* X - X K
//! ```
//!
//! Superoperators are stored as `d^2 x d^2` matrices on column-stacked
//! vectors, `vec(A X B) = (B^T (x) A) vec(X)`, so composition of maps is
//! matrix multiplication.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::quad::gauss_legendre;
use crate::{Error, Result};

pub type CMat = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Tolerance for dissipativity and unitality checks.
pub const STRUCTURE_TOLERANCE: f64 = 1e-10;

fn check_square(m: &CMat, d: usize) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if m.nrows() != d { m.nrows() } else { m.ncols() },
        });
    }
    Ok(())
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Eigenvalues of a Hermitian matrix (the anti-Hermitian part is dropped).
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = hermitian_part(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Largest singular value of a Hermitian positive matrix.
fn operator_norm_psd(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).iter().map(|v| v.abs()).fold(0.0, f64::max)
}

pub fn trace(m: &CMat) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Column-stacking vectorization.
pub fn vec_of(m: &CMat) -> nalgebra::DVector<Complex64> {
    nalgebra::DVector::from_iterator(m.len(), m.iter().copied())
}

pub fn unvec(v: &nalgebra::DVector<Complex64>, d: usize) -> CMat {
    CMat::from_iterator(d, d, v.iter().copied())
}

/// Density operator: Hermitian, positive, unit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMat,
}

impl DensityMatrix {
    pub fn new(matrix: CMat) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::param("rho", "must be square"));
        }
        if max_abs(&(&matrix - matrix.adjoint())) > 1e-12 {
            return Err(Error::param("rho", "not Hermitian"));
        }
        if min_eigenvalue(&matrix) < -1e-12 {
            return Err(Error::param("rho", "has a negative eigenvalue"));
        }
        if (trace(&matrix) - ONE).norm() > 1e-12 {
            return Err(Error::param("rho", "trace differs from one"));
        }
        Ok(DensityMatrix { matrix })
    }

    pub fn maximally_mixed(d: usize) -> Self {
        DensityMatrix {
            matrix: CMat::identity(d, d) * Complex64::new(1.0 / d as f64, 0.0),
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Linear map on `d x d` matrices in superoperator form.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    d: usize,
    matrix: CMat,
}

impl Superoperator {
    pub fn from_matrix(d: usize, matrix: CMat) -> Result<Self> {
        check_square(&matrix, d * d)?;
        Ok(Superoperator { d, matrix })
    }

    /// Assembles the superoperator of an arbitrary linear map.
    pub fn from_map(d: usize, map: impl Fn(&CMat) -> CMat) -> Self {
        let mut matrix = CMat::zeros(d * d, d * d);
        for j in 0..d {
            for i in 0..d {
                let mut e = CMat::zeros(d, d);
                e[(i, j)] = ONE;
                let img = map(&e);
                matrix.set_column(j * d + i, &vec_of(&img));
            }
        }
        Superoperator { d, matrix }
    }

    pub fn identity(d: usize) -> Self {
        Superoperator {
            d,
            matrix: CMat::identity(d * d, d * d),
        }
    }

    /// `X -> A X B`.
    pub fn sandwich(a: &CMat, b: &CMat) -> Self {
        Superoperator {
            d: a.nrows(),
            matrix: b.transpose().kronecker(a),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn apply(&self, x: &CMat) -> CMat {
        unvec(&(&self.matrix * vec_of(x)), self.d)
    }

    /// `self o other`: apply `other` first.
    pub fn compose(&self, other: &Superoperator) -> Superoperator {
        Superoperator {
            d: self.d,
            matrix: &self.matrix * &other.matrix,
        }
    }

    pub fn max_entry_distance(&self, other: &Superoperator) -> f64 {
        max_abs(&(&self.matrix - &other.matrix))
    }

    pub fn choi(&self) -> ChoiMatrix {
        choi_matrix(|x| self.apply(x), self.d)
    }

    /// Regression snapshot: `{"d": d, "matrix": [[[re, im], ...], ...]}`.
    pub fn to_json(&self) -> Value {
        json!({ "d": self.d, "matrix": matrix_to_json(&self.matrix) })
    }
}

/// Row-major list of `[re, im]` pairs.
pub fn matrix_to_json(m: &CMat) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|r| Value::Array((0..m.ncols()).map(|c| json!([m[(r, c)].re, m[(r, c)].im])).collect()))
            .collect(),
    )
}

pub fn matrix_from_json(v: &Value) -> Result<CMat> {
    let rows = v.as_array().ok_or_else(|| Error::param("matrix", "expected an array of rows"))?;
    let nrows = rows.len();
    let mut entries = Vec::new();
    let mut ncols = None;
    for row in rows {
        let row = row.as_array().ok_or_else(|| Error::param("matrix", "row is not an array"))?;
        if *ncols.get_or_insert(row.len()) != row.len() {
            return Err(Error::param("matrix", "ragged rows"));
        }
        for e in row {
            let pair = e.as_array().filter(|p| p.len() == 2);
            let (re, im) = pair
                .and_then(|p| Some((p[0].as_f64()?, p[1].as_f64()?)))
                .ok_or_else(|| Error::param("matrix", "entries must be [re, im] pairs"))?;
            entries.push(Complex64::new(re, im));
        }
    }
    Ok(CMat::from_row_iterator(nrows, ncols.unwrap_or(0), entries))
}

/// `C = sum_ij E_ij (x) M[E_ij]`, indexed `C[(i d + a), (j d + b)] = M[E_ij]_ab`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiMatrix {
    pub d: usize,
    pub matrix: CMat,
}

impl ChoiMatrix {
    pub fn is_hermitian(&self, tol: f64) -> bool {
        max_abs(&(&self.matrix - self.matrix.adjoint())) <= tol
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.matrix)
    }
}

pub fn choi_matrix(map: impl Fn(&CMat) -> CMat, d: usize) -> ChoiMatrix {
    let mut c = CMat::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            let mut e = CMat::zeros(d, d);
            e[(i, j)] = ONE;
            let img = map(&e);
            for a in 0..d {
                for b in 0..d {
                    c[(i * d + a, j * d + b)] = img[(a, b)];
                }
            }
        }
    }
    ChoiMatrix { d, matrix: c }
}

/// Choi matrix with a linearity spot check on two fixed test matrices.
pub fn choi_matrix_checked(map: impl Fn(&CMat) -> CMat, d: usize) -> Result<ChoiMatrix> {
    let x = CMat::from_fn(d, d, |r, c| Complex64::new(0.3 + r as f64 - 0.7 * c as f64, 0.2 * (r * c) as f64 - 0.5));
    let y = CMat::from_fn(d, d, |r, c| Complex64::new((r as f64 + 1.0).sqrt() * 0.4, 1.1 - c as f64));
    let (a, b) = (Complex64::new(0.6, -1.3), Complex64::new(-2.1, 0.4));
    let lhs = map(&(&x * a + &y * b));
    let rhs = map(&x) * a + map(&y) * b;
    let scale = max_abs(&rhs).max(1.0);
    if max_abs(&(lhs - rhs)) > 1e-9 * scale {
        return Err(Error::param("map", "linearity spot check failed"));
    }
    Ok(choi_matrix(map, d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityReport {
    pub passed: bool,
    pub min_eigenvalue: f64,
}

pub fn is_completely_positive(map: impl Fn(&CMat) -> CMat, d: usize, tol: f64) -> Result<PositivityReport> {
    let c = choi_matrix_checked(map, d)?;
    let min = min_eigenvalue(&c.matrix);
    Ok(PositivityReport {
        passed: min >= -tol,
        min_eigenvalue: min,
    })
}

/// Conditional complete positivity: the Choi matrix compressed to the
/// complement of the maximally entangled vector is positive. `tol` is scaled
/// by the largest Choi entry.
pub fn is_conditionally_cp(map: impl Fn(&CMat) -> CMat, d: usize, tol: f64) -> Result<PositivityReport> {
    let c = choi_matrix_checked(map, d)?;
    let n = d * d;
    let mut proj = CMat::identity(n, n);
    let scale = 1.0 / d as f64;
    for i in 0..d {
        for j in 0..d {
            proj[(i * d + i, j * d + j)] -= Complex64::new(scale, 0.0);
        }
    }
    let compressed = &proj * &c.matrix * &proj;
    let min = min_eigenvalue(&compressed);
    let norm = max_abs(&c.matrix).max(1.0);
    Ok(PositivityReport {
        passed: min >= -tol * norm,
        min_eigenvalue: min,
    })
}

/// Generator `L[X] = sum L_k* X L_k - K* X - X K`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardGenerator {
    d: usize,
    hamiltonian: Option<CMat>,
    jump_ops: Vec<CMat>,
    k: CMat,
}

impl StandardGenerator {
    /// Unital build: `K = iH + 1/2 sum L_k* L_k`, so that
    /// `L[X] = i[H, X] + sum (L_k* X L_k - 1/2 {L_k* L_k, X})`.
    pub fn unital(hamiltonian: CMat, jump_ops: Vec<CMat>) -> Result<Self> {
        let d = hamiltonian.nrows();
        check_square(&hamiltonian, d)?;
        if max_abs(&(&hamiltonian - hamiltonian.adjoint())) > 1e-12 {
            return Err(Error::param("hamiltonian", "not Hermitian"));
        }
        for l in &jump_ops {
            check_square(l, d)?;
        }
        let k = &hamiltonian * I + jump_sum(&jump_ops, d) * Complex64::new(0.5, 0.0);
        Ok(StandardGenerator {
            d,
            hamiltonian: Some(hamiltonian),
            jump_ops,
            k,
        })
    }

    /// Raw build from `(K, {L_k})`, validating `sum L_k* L_k <= K + K*`.
    pub fn raw(k: CMat, jump_ops: Vec<CMat>) -> Result<Self> {
        let d = k.nrows();
        check_square(&k, d)?;
        for l in &jump_ops {
            check_square(l, d)?;
        }
        let g = StandardGenerator {
            d,
            hamiltonian: None,
            jump_ops,
            k,
        };
        let slack = g.dissipativity_slack();
        if slack < -STRUCTURE_TOLERANCE {
            return Err(Error::param(
                "K",
                format!("dissipativity violated: min eig(K + K* - sum L*L) = {slack:e}"),
            ));
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn jump_ops(&self) -> &[CMat] {
        &self.jump_ops
    }

    pub fn k(&self) -> &CMat {
        &self.k
    }

    pub fn hamiltonian(&self) -> Option<&CMat> {
        self.hamiltonian.as_ref()
    }

    /// Smallest eigenvalue of `K + K* - sum L_k* L_k`.
    pub fn dissipativity_slack(&self) -> f64 {
        min_eigenvalue(&(&self.k + self.k.adjoint() - jump_sum(&self.jump_ops, self.d)))
    }

    pub fn is_unital(&self) -> bool {
        let gap = &self.k + self.k.adjoint() - jump_sum(&self.jump_ops, self.d);
        operator_norm_psd(&gap) <= STRUCTURE_TOLERANCE
    }

    /// Heisenberg-picture action.
    pub fn apply(&self, x: &CMat) -> Result<CMat> {
        check_square(x, self.d)?;
        Ok(self.apply_unchecked(x))
    }

    fn apply_unchecked(&self, x: &CMat) -> CMat {
        let mut out = -(self.k.adjoint() * x) - x * &self.k;
        for l in &self.jump_ops {
            out += l.adjoint() * x * l;
        }
        out
    }

    /// Trace-picture adjoint `L_*[rho] = sum L_k rho L_k* - K rho - rho K*`.
    pub fn apply_predual(&self, rho: &CMat) -> Result<CMat> {
        check_square(rho, self.d)?;
        let mut out = -(&self.k * rho) - rho * self.k.adjoint();
        for l in &self.jump_ops {
            out += l * rho * l.adjoint();
        }
        Ok(out)
    }

    /// `X -> sum L_k* X L_k`.
    pub fn jump_part(&self) -> Superoperator {
        let mut s = CMat::zeros(self.d * self.d, self.d * self.d);
        for l in &self.jump_ops {
            s += Superoperator::sandwich(&l.adjoint(), l).matrix;
        }
        Superoperator { d: self.d, matrix: s }
    }

    /// `X -> -K* X - X K`, generator of the relaxing semigroup.
    pub fn relaxing_part(&self) -> Superoperator {
        let id = CMat::identity(self.d, self.d);
        let m = -(Superoperator::sandwich(&self.k.adjoint(), &id).matrix) - Superoperator::sandwich(&id, &self.k).matrix;
        Superoperator { d: self.d, matrix: m }
    }

    pub fn superoperator(&self) -> Superoperator {
        Superoperator {
            d: self.d,
            matrix: self.jump_part().matrix + self.relaxing_part().matrix,
        }
    }
}

fn jump_sum(jump_ops: &[CMat], d: usize) -> CMat {
    jump_ops.iter().fold(CMat::zeros(d, d), |acc, l| acc + l.adjoint() * l)
}

/// `apply_generator(G, X)`.
pub fn apply_generator(g: &StandardGenerator, x: &CMat) -> Result<CMat> {
    g.apply(x)
}

/// `exp(tL)` by Padé scaling and squaring on the superoperator matrix.
pub fn exact_evolve(g: &StandardGenerator, t: f64) -> Superoperator {
    let s = g.superoperator();
    Superoperator {
        d: g.d,
        matrix: (s.matrix * Complex64::new(t, 0.0)).exp(),
    }
}

/// Truncated expansion in the number of jumps.
#[derive(Debug, Clone)]
pub struct DysonExpansion {
    /// `terms[n]` is the contribution with exactly `n` jumps.
    pub terms: Vec<Superoperator>,
    pub panels: usize,
}

impl DysonExpansion {
    pub fn sum(&self) -> Superoperator {
        let d = self.terms[0].d;
        let m = self
            .terms
            .iter()
            .fold(CMat::zeros(d * d, d * d), |acc, t| acc + &t.matrix);
        Superoperator { d, matrix: m }
    }
}

/// Gauss–Legendre order per panel for the time-ordered integrals.
pub const DYSON_GAUSS_ORDER: usize = 16;

/// Jump expansion of `exp(tL)` up to `n_terms` jumps.
///
/// With `J_0(s) = e^{As}` (relaxing semigroup) and
/// `J_n(s) = Int_0^s J_{n-1}(u) B e^{A(s-u)} du` (`B` the jump part), the
/// n-jump term is `J_n(t)`. Each `J_n` is tabulated on composite 16-point
/// Gauss–Legendre nodes; the partial-panel integrals use the spectral
/// integration matrix of the panel's Lagrange basis, so every nested simplex
/// integral is resolved by Gauss quadrature in each dimension.
pub fn dyson_evolve(g: &StandardGenerator, t: f64, n_terms: usize) -> Result<DysonExpansion> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    let d = g.d;
    let a = g.relaxing_part().matrix;
    let b = g.jump_part().matrix;
    let relax = |s: f64| (&a * Complex64::new(s, 0.0)).exp();
    let mut terms = vec![Superoperator { d, matrix: relax(t) }];
    if n_terms == 0 || t == 0.0 {
        for _ in 0..n_terms {
            terms.push(Superoperator {
                d,
                matrix: CMat::zeros(d * d, d * d),
            });
        }
        return Ok(DysonExpansion { terms, panels: 0 });
    }
    let scale = max_abs(&a) + max_abs(&b);
    let panels = ((2.0 * t * scale).ceil() as usize).clamp(1, 64);
    let q = DYSON_GAUSS_ORDER;
    let (gx, gw) = gauss_legendre(q);
    let hw = 0.5 * t / panels as f64;
    let nodes: Vec<f64> = (0..panels)
        .flat_map(|p| {
            let lo = 2.0 * hw * p as f64;
            gx.iter().map(move |x| lo + hw * (x + 1.0)).collect::<Vec<_>>()
        })
        .collect();
    let integ = spectral_integration_matrix(&gx, &gw);
    let fwd: Vec<CMat> = nodes.iter().map(|&s| relax(s)).collect();
    let bwd: Vec<CMat> = nodes.iter().map(|&s| relax(-s)).collect();
    let fwd_t = relax(t);
    // propagator from node u to node s: e^{A(s-u)} = e^{As} e^{-Au}
    let mut prev: Vec<CMat> = fwd.clone();
    for _ in 1..=n_terms {
        // integrand pieces G(u) = J_{n-1}(u) B e^{-Au}; J_n(s) = (Int_0^s G) e^{As}
        let pieces: Vec<CMat> = prev.iter().zip(&bwd).map(|(j, e)| j * &b * e).collect();
        let mut next = Vec::with_capacity(nodes.len());
        let mut completed = CMat::zeros(d * d, d * d);
        for p in 0..panels {
            let base = p * q;
            for i in 0..q {
                let mut partial = completed.clone();
                for j in 0..q {
                    partial += &pieces[base + j] * Complex64::new(hw * integ[i][j], 0.0);
                }
                next.push(partial * &fwd[base + i]);
            }
            for j in 0..q {
                completed += &pieces[base + j] * Complex64::new(hw * gw[j], 0.0);
            }
        }
        terms.push(Superoperator {
            d,
            matrix: &completed * &fwd_t,
        });
        prev = next;
    }
    Ok(DysonExpansion { terms, panels })
}

/// `S[i][j] = Int_{-1}^{x_i} l_j(s) ds` for the Lagrange basis on `nodes`.
fn spectral_integration_matrix(nodes: &[f64], weights: &[f64]) -> Vec<Vec<f64>> {
    let q = nodes.len();
    let lagrange = |j: usize, s: f64| {
        nodes
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != j)
            .map(|(_, &xm)| (s - xm) / (nodes[j] - xm))
            .product::<f64>()
    };
    (0..q)
        .map(|i| {
            let half = 0.5 * (nodes[i] + 1.0);
            (0..q)
                .map(|j| {
                    nodes
                        .iter()
                        .zip(weights)
                        .map(|(&x, &w)| w * half * lagrange(j, -1.0 + half * (x + 1.0)))
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// `|Tr(L_*[rho] X_t) - Tr(rho L[X_t])|` with `X_t = exp(tL)[X]`.
pub fn check_duality(g: &StandardGenerator, rho: &DensityMatrix, x: &CMat, t: f64) -> Result<f64> {
    check_square(x, g.d)?;
    check_square(rho.matrix(), g.d)?;
    let xt = if t == 0.0 { x.clone() } else { exact_evolve(g, t).apply(x) };
    let lhs = trace(&(g.apply_predual(rho.matrix())? * &xt));
    let rhs = trace(&(rho.matrix() * g.apply(&xt)?));
    Ok((lhs - rhs).norm())
}

/// Element `(D, a, b)` of the gauge group of standard representations.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeElement {
    pub d: CMat,
    pub a: Vec<Complex64>,
    pub b: f64,
}

impl GaugeElement {
    pub fn new(d: CMat, a: Vec<Complex64>, b: f64) -> Result<Self> {
        let m = d.nrows();
        check_square(&d, m)?;
        if a.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: a.len() });
        }
        if max_abs(&(d.adjoint() * &d - CMat::identity(m, m))) > 1e-12 {
            return Err(Error::param("D", "not unitary"));
        }
        Ok(GaugeElement { d, a, b })
    }

    pub fn identity(m: usize) -> Self {
        GaugeElement {
            d: CMat::identity(m, m),
            a: vec![ZERO; m],
            b: 0.0,
        }
    }

    /// Group product `self * other`:
    /// `(D', a', b')(D, a, b) = (D'D, D'a + a', b + b' - Im<a'|D'a>)`.
    pub fn compose(&self, other: &GaugeElement) -> GaugeElement {
        let da: Vec<Complex64> = mat_vec(&self.d, &other.a);
        let overlap: Complex64 = self.a.iter().zip(&da).map(|(x, y)| x.conj() * y).sum();
        GaugeElement {
            d: &self.d * &other.d,
            a: da.iter().zip(&self.a).map(|(x, y)| x + y).collect(),
            b: other.b + self.b - overlap.im,
        }
    }
}

fn mat_vec(m: &CMat, v: &[Complex64]) -> Vec<Complex64> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)] * v[c]).sum()).collect()
}

/// `L'_k = sum_j D_kj L_j + a_k I`,
/// `K' = K + sum_k conj(a_k) (D L)_k + (|a|^2/2 - i b) I`.
pub fn apply_gauge(g: &StandardGenerator, gauge: &GaugeElement) -> Result<StandardGenerator> {
    let m = g.jump_ops.len();
    if gauge.d.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: gauge.d.nrows(),
        });
    }
    let id = CMat::identity(g.d, g.d);
    let rotated: Vec<CMat> = (0..m)
        .map(|k| (0..m).fold(CMat::zeros(g.d, g.d), |acc, j| acc + &g.jump_ops[j] * gauge.d[(k, j)]))
        .collect();
    let norm_a: f64 = gauge.a.iter().map(|z| z.norm_sqr()).sum();
    let mut k = g.k.clone() + &id * Complex64::new(0.5 * norm_a, -gauge.b);
    for (ak, lk) in gauge.a.iter().zip(&rotated) {
        k += lk * ak.conj();
    }
    let jump_ops = rotated.into_iter().zip(&gauge.a).map(|(l, &ak)| l + &id * ak).collect();
    Ok(StandardGenerator {
        d: g.d,
        hamiltonian: None,
        jump_ops,
        k,
    })
}

fn pair_distance(a: &StandardGenerator, b: &StandardGenerator) -> f64 {
    let mut worst = max_abs(&(&a.k - &b.k));
    for (x, y) in a.jump_ops.iter().zip(&b.jump_ops) {
        worst = worst.max(max_abs(&(x - y)));
    }
    worst
}

/// Distance between `(L, K)` from gauging by `g2` then `g1`, and from
/// gauging once by the product `g1 * g2`.
pub fn gauge_group_law_check(g: &StandardGenerator, g1: &GaugeElement, g2: &GaugeElement) -> Result<f64> {
    let twice = apply_gauge(&apply_gauge(g, g2)?, g1)?;
    let once = apply_gauge(g, &g1.compose(g2))?;
    Ok(pair_distance(&twice, &once))
}

/// Largest difference between the actions of two generators on the matrix
/// units.
pub fn generator_action_distance(a: &StandardGenerator, b: &StandardGenerator) -> f64 {
    a.superoperator().max_entry_distance(&b.superoperator())
}

/// `max_X ||Phi[V* X V] - V* Phi[X] V||` (Frobenius).
pub fn covariance_defect(map: impl Fn(&CMat) -> CMat, v: &CMat, battery: &[CMat]) -> f64 {
    battery
        .iter()
        .map(|x| {
            let lhs = map(&(v.adjoint() * x * v));
            let rhs = v.adjoint() * map(x) * v;
            (lhs - rhs).norm()
        })
        .fold(0.0, f64::max)
}

/// Matrix units plus the Hermitian combinations, a basis for covariance scans.
pub fn operator_basis(d: usize) -> Vec<CMat> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..d {
            let mut e = CMat::zeros(d, d);
            e[(i, j)] = ONE;
            out.push(e);
        }
    }
    out
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * scale
    })
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, d: usize, scale: f64) -> CMat {
    hermitian_part(&gaussian_matrix(rng, d, d, scale))
}

pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, m: usize) -> CMat {
    let z = gaussian_matrix(rng, m, m, 1.0);
    let qr = z.qr();
    let (q, r) = (qr.q(), qr.r());
    // fix column phases so the distribution does not depend on QR conventions
    let mut q = q;
    for c in 0..m {
        let rc = r[(c, c)];
        let phase = if rc.norm() > 0.0 { rc / rc.norm() } else { ONE };
        for row in 0..m {
            q[(row, c)] *= phase;
        }
    }
    q
}

/// Random generator with `m` jump operators; non-unital ones add a random
/// positive relaxation `M M*` to `K`.
pub fn random_generator<R: Rng + ?Sized>(rng: &mut R, d: usize, m: usize, unital: bool) -> StandardGenerator {
    let h = random_hermitian(rng, d, 1.0);
    let jumps: Vec<CMat> = (0..m).map(|_| gaussian_matrix(rng, d, d, 0.5)).collect();
    let g = StandardGenerator::unital(h, jumps).expect("well-formed random generator");
    if unital {
        return g;
    }
    let extra = gaussian_matrix(rng, d, d, 0.4);
    let k = g.k.clone() + &extra * extra.adjoint() * Complex64::new(0.5, 0.0);
    StandardGenerator::raw(k, g.jump_ops.clone()).expect("dissipative by construction")
}

pub fn random_gauge<R: Rng + ?Sized>(rng: &mut R, m: usize) -> GaugeElement {
    let d = random_unitary(rng, m);
    let a = (0..m)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * 0.7
        })
        .collect();
    GaugeElement {
        d,
        a,
        b: rng.sample::<f64, _>(StandardNormal),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sigma_minus() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO])
    }

    fn sigma_z() -> CMat {
        CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }

    #[test]
    fn unital_generator_kills_identity() {
        let mut rng = stream_rng(1, 0);
        let g = random_generator(&mut rng, 3, 2, true);
        assert!(g.is_unital());
        let out = g.apply(&CMat::identity(3, 3)).unwrap();
        assert!(max_abs(&out) < 1e-12);
    }

    #[test]
    fn pure_hamiltonian_is_commutator() {
        let mut rng = stream_rng(2, 0);
        let h = random_hermitian(&mut rng, 3, 1.0);
        let x = gaussian_matrix(&mut rng, 3, 3, 1.0);
        let g = StandardGenerator::unital(h.clone(), vec![]).unwrap();
        let expected = (&h * &x - &x * &h) * I;
        assert!(max_abs(&(g.apply(&x).unwrap() - expected)) < 1e-12);
    }

    #[test]
    fn damped_qubit_on_sigma_z() {
        // hand expansion: sigma+ sigma_z sigma- = |1><1|, K = 1/2 |1><1|,
        // K* sigma_z + sigma_z K = -|1><1|, so L[sigma_z] = 2 |1><1|
        let l = sigma_minus();
        let k = l.adjoint() * &l * c(0.5, 0.0);
        let g = StandardGenerator::raw(k, vec![l]).unwrap();
        assert!(g.is_unital());
        let out = g.apply(&sigma_z()).unwrap();
        let expected = CMat::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, c(2.0, 0.0)]);
        assert!(max_abs(&(out - expected)) < 1e-15);
    }

    #[test]
    fn raw_build_rejects_non_dissipative() {
        let l = sigma_minus();
        assert!(StandardGenerator::raw(CMat::zeros(2, 2), vec![l]).is_err());
        assert!(StandardGenerator::unital(CMat::zeros(2, 2), vec![CMat::zeros(3, 3)]).is_err());
        let g = StandardGenerator::unital(CMat::zeros(2, 2), vec![]).unwrap();
        assert!(g.apply(&CMat::zeros(3, 3)).is_err());
    }

    #[test]
    fn choi_of_identity_and_transpose() {
        let id = choi_matrix(|x| x.clone(), 2);
        let ev = id.eigenvalues();
        for (a, b) in ev.iter().zip([0.0, 0.0, 0.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let tr = choi_matrix(|x| x.transpose(), 2);
        let ev = tr.eigenvalues();
        for (a, b) in ev.iter().zip([-1.0, 1.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = choi_matrix(|x| x * ZERO, 2);
        assert!(max_abs(&zero.matrix) == 0.0);
    }

    #[test]
    fn cp_classification() {
        let mut rng = stream_rng(3, 0);
        let u = random_unitary(&mut rng, 3);
        assert!(is_completely_positive(|x| u.adjoint() * x * &u, 3, 1e-10).unwrap().passed);
        let t = is_completely_positive(|x| x.transpose(), 2, 1e-10).unwrap();
        assert!(!t.passed);
        assert!((t.min_eigenvalue + 1.0).abs() < 1e-10);
        let ls: Vec<CMat> = (0..3).map(|_| gaussian_matrix(&mut rng, 3, 3, 1.0)).collect();
        let stinespring = |x: &CMat| ls.iter().fold(CMat::zeros(3, 3), |acc, l| acc + l.adjoint() * x * l);
        assert!(is_completely_positive(stinespring, 3, 1e-10).unwrap().passed);
    }

    #[test]
    fn nonlinear_map_rejected() {
        assert!(choi_matrix_checked(|x| x.map(|z| z * z), 2).is_err());
    }

    #[test]
    fn conditional_cp_cases() {
        let mut rng = stream_rng(4, 0);
        let g = random_generator(&mut rng, 3, 2, false);
        assert!(is_conditionally_cp(|x| g.apply(x).unwrap(), 3, 1e-10).unwrap().passed);
        assert!(!is_conditionally_cp(|x| x.transpose(), 2, 1e-10).unwrap().passed);
        let h = random_hermitian(&mut rng, 2, 1.0);
        let ham = StandardGenerator::unital(h, vec![]).unwrap();
        assert!(is_conditionally_cp(|x| ham.apply(x).unwrap(), 2, 1e-10).unwrap().passed);
    }

    #[test]
    fn superoperator_matches_direct_action() {
        let mut rng = stream_rng(5, 0);
        let g = random_generator(&mut rng, 3, 2, false);
        let x = gaussian_matrix(&mut rng, 3, 3, 1.0);
        let s = g.superoperator();
        assert!(max_abs(&(s.apply(&x) - g.apply(&x).unwrap())) < 1e-12);
        let via_map = Superoperator::from_map(3, |x| g.apply(x).unwrap());
        assert!(via_map.max_entry_distance(&s) < 1e-12);
    }

    #[test]
    fn exact_evolution_basics() {
        let mut rng = stream_rng(6, 0);
        let g = random_generator(&mut rng, 2, 2, true);
        assert!(exact_evolve(&g, 0.0).max_entry_distance(&Superoperator::identity(2)) < 1e-15);
        let id = exact_evolve(&g, 1.7).apply(&CMat::identity(2, 2));
        assert!(max_abs(&(id - CMat::identity(2, 2))) < 1e-10);
        let composed = exact_evolve(&g, 0.4).compose(&exact_evolve(&g, 0.9));
        assert!(composed.max_entry_distance(&exact_evolve(&g, 1.3)) < 1e-9);
    }

    #[test]
    fn dyson_zero_terms_is_relaxing_semigroup() {
        let mut rng = stream_rng(7, 0);
        let g = random_generator(&mut rng, 2, 1, true);
        let t = 0.8;
        let ex = dyson_evolve(&g, t, 0).unwrap();
        let k = g.k().clone();
        let direct = Superoperator::from_map(2, |x| {
            let e = (&k * c(-t, 0.0)).exp();
            e.adjoint() * x * e
        });
        assert!(ex.sum().max_entry_distance(&direct) < 1e-12);
        let t0 = dyson_evolve(&g, 0.0, 5).unwrap();
        assert!(t0.sum().max_entry_distance(&Superoperator::identity(2)) < 1e-15);
    }

    #[test]
    fn dyson_terms_match_block_exponential() {
        // oracle: exp of the block-bidiagonal matrix [[A, B, 0], [0, A, B], [0, 0, A]]
        let mut rng = stream_rng(8, 0);
        let g = random_generator(&mut rng, 2, 2, false);
        let (a, b) = (g.relaxing_part().matrix, g.jump_part().matrix);
        let n = 3;
        let dd = a.nrows();
        let mut big = CMat::zeros(dd * (n + 1), dd * (n + 1));
        for blk in 0..=n {
            big.view_mut((blk * dd, blk * dd), (dd, dd)).copy_from(&a);
            if blk < n {
                big.view_mut((blk * dd, (blk + 1) * dd), (dd, dd)).copy_from(&b);
            }
        }
        let t = 1.3;
        let e = (big * c(t, 0.0)).exp();
        let ex = dyson_evolve(&g, t, n).unwrap();
        for k in 0..=n {
            let oracle = e.view((0, k * dd), (dd, dd)).into_owned();
            assert!(max_abs(&(oracle - &ex.terms[k].matrix)) < 1e-11, "term {k}");
        }
    }

    #[test]
    fn duality_identities() {
        let mut rng = stream_rng(9, 0);
        let g = random_generator(&mut rng, 3, 2, true);
        let x = gaussian_matrix(&mut rng, 3, 3, 1.0);
        let rho = DensityMatrix::maximally_mixed(3);
        assert!(check_duality(&g, &rho, &x, 0.0).unwrap() < 1e-12);
        assert!(check_duality(&g, &rho, &x, 0.7).unwrap() < 1e-10);
        let tr = trace(&g.apply_predual(rho.matrix()).unwrap());
        assert!(tr.norm() < 1e-12);
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(CMat::identity(2, 2)).is_err());
        assert!(DensityMatrix::new(CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO])).is_ok());
        assert!(DensityMatrix::new(CMat::from_row_slice(2, 2, &[c(1.5, 0.0), ZERO, ZERO, c(-0.5, 0.0)])).is_err());
    }

    #[test]
    fn gauge_identity_and_b_only() {
        let mut rng = stream_rng(10, 0);
        let g = random_generator(&mut rng, 2, 3, true);
        let same = apply_gauge(&g, &GaugeElement::identity(3)).unwrap();
        assert!(pair_distance(&same, &g) < 1e-15);
        let b_only = GaugeElement::new(CMat::identity(3, 3), vec![ZERO; 3], 0.9).unwrap();
        let gb = apply_gauge(&g, &b_only).unwrap();
        let expected_k = g.k() - CMat::identity(2, 2) * c(0.0, 0.9);
        assert!(max_abs(&(gb.k() - expected_k)) < 1e-15);
        assert!(generator_action_distance(&gb, &g) < 1e-12);
        assert!(gb.is_unital());
    }

    #[test]
    fn gauge_translation_product() {
        let a = vec![c(1.0, 0.5), c(-0.3, 0.2)];
        let a2 = vec![c(0.4, -1.0), c(0.7, 0.1)];
        let g1 = GaugeElement::new(CMat::identity(2, 2), a2.clone(), 0.0).unwrap();
        let g2 = GaugeElement::new(CMat::identity(2, 2), a.clone(), 0.0).unwrap();
        let prod = g1.compose(&g2);
        let overlap: Complex64 = a2.iter().zip(&a).map(|(x, y)| x.conj() * y).sum();
        assert!((prod.b + overlap.im).abs() < 1e-15);
        assert_eq!(g1.compose(&GaugeElement::identity(2)), g1);
    }

    #[test]
    fn gauge_rejects_bad_shapes() {
        assert!(GaugeElement::new(CMat::identity(2, 2) * c(2.0, 0.0), vec![ZERO; 2], 0.0).is_err());
        assert!(GaugeElement::new(CMat::identity(2, 2), vec![ZERO; 3], 0.0).is_err());
        let mut rng = stream_rng(11, 0);
        let g = random_generator(&mut rng, 2, 2, true);
        assert!(apply_gauge(&g, &GaugeElement::identity(3)).is_err());
    }

    #[test]
    fn phase_covariant_damping() {
        let theta = 0.83;
        let v = CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, Complex64::from_polar(1.0, theta)]);
        let h = CMat::from_row_slice(2, 2, &[c(0.4, 0.0), ZERO, ZERO, c(-0.4, 0.0)]);
        let g = StandardGenerator::unital(h, vec![sigma_minus() * c(0.9, 0.0), sigma_z() * c(0.3, 0.0)]).unwrap();
        let evo = exact_evolve(&g, 1.1);
        let basis = operator_basis(2);
        assert!(covariance_defect(|x| evo.apply(x), &v, &basis) < 1e-10);
        assert_eq!(covariance_defect(|x| evo.apply(x), &CMat::identity(2, 2), &basis), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = stream_rng(12, 0);
        let m = gaussian_matrix(&mut rng, 2, 3, 1.0);
        let back = matrix_from_json(&matrix_to_json(&m)).unwrap();
        assert_eq!(back, m);
        assert!(matrix_from_json(&json!([[1.0]])).is_err());
    }
}
