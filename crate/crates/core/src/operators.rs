//! Matrix-free local operators and the two spin-chain models.
//!
//! Spin convention: `|0> = |up>` (active), `|1> = |down>` (inactive), so
//! `sigma^z |0> = +|0>`, the number operator is `n = |0><0|` and the fully
//! up initial state is the all-zeros bitstring.

use serde::{Deserialize, Serialize};

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{pauli_x, pauli_z, CMatrix, Matrix2, ONE, ZERO};
use crate::statevector::QuantumState;

/// `n = |up><up| = |0><0|`
pub fn number() -> Matrix2 {
    [[ONE, ZERO], [ZERO, ZERO]]
}

/// `1 - n = |down><down|`
pub fn vacancy() -> Matrix2 {
    [[ZERO, ZERO], [ZERO, ONE]]
}

/// `sigma^- = |down><up| = |1><0|`
pub fn sigma_minus() -> Matrix2 {
    [[ZERO, ZERO], [ONE, ZERO]]
}

/// `sigma^+ = |up><down| = |0><1|`
pub fn sigma_plus() -> Matrix2 {
    [[ZERO, ONE], [ZERO, ZERO]]
}

/// Row-major matrix of `f[0] (x) f[1] (x) ...` where factor `j` acts on
/// local bit `j`.
pub fn kron_local(factors: &[Matrix2]) -> Vec<C64> {
    let k = factors.len();
    let dim = 1usize << k;
    let mut m = vec![ZERO; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            m[r * dim + c] = factors
                .iter()
                .enumerate()
                .map(|(j, f)| f[r >> j & 1][c >> j & 1])
                .product();
        }
    }
    m
}

/// A few-site operator `coefficient * matrix` acting on `sites`.
///
/// The matrix is row-major over the local index whose bit `j` is the state
/// of `sites[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTerm {
    pub sites: Vec<usize>,
    pub matrix: Vec<C64>,
    pub coefficient: C64,
    pub label: String,
}

impl LocalTerm {
    pub fn new(sites: Vec<usize>, matrix: Vec<C64>, coefficient: C64, label: &str) -> Result<Self> {
        let k = sites.len();
        if !(1..=3).contains(&k) {
            return Err(Error::InvalidModel(format!("term `{label}` acts on {k} sites")));
        }
        for (i, s) in sites.iter().enumerate() {
            if sites[..i].contains(s) {
                return Err(Error::DuplicateQubit(*s));
            }
        }
        let dim = 1usize << k;
        if matrix.len() != dim * dim {
            return Err(Error::InvalidModel(format!(
                "term `{label}` has {} matrix entries, expected {}",
                matrix.len(),
                dim * dim
            )));
        }
        Ok(Self { sites, matrix, coefficient, label: label.to_string() })
    }

    pub fn single(site: usize, m: Matrix2, coefficient: C64, label: &str) -> Self {
        Self { sites: vec![site], matrix: kron_local(&[m]), coefficient, label: label.to_string() }
    }

    pub fn pair(a: usize, ma: Matrix2, b: usize, mb: Matrix2, coefficient: C64, label: &str) -> Result<Self> {
        Self::new(vec![a, b], kron_local(&[ma, mb]), coefficient, label)
    }

    pub fn dim(&self) -> usize {
        1 << self.sites.len()
    }

    /// Entry `(r, c)` of `coefficient * matrix`.
    pub fn entry(&self, r: usize, c: usize) -> C64 {
        self.coefficient * self.matrix[r * self.dim() + c]
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|r| (0..d).all(|c| (self.entry(r, c) - self.entry(c, r).conj()).norm() <= tol))
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|r| (0..d).all(|c| r == c || self.entry(r, c).norm() <= tol))
    }

    pub fn adjoint(&self) -> LocalTerm {
        let d = self.dim();
        let mut m = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                m[r * d + c] = self.matrix[c * d + r].conj();
            }
        }
        LocalTerm {
            sites: self.sites.clone(),
            matrix: m,
            coefficient: self.coefficient.conj(),
            label: format!("{}^dag", self.label),
        }
    }

    fn local_index(&self, global: usize) -> usize {
        self.sites.iter().enumerate().map(|(j, &s)| (global >> s & 1) << j).sum()
    }

    /// Diagonal value on a computational basis state (for diagonal terms).
    pub fn diagonal_value(&self, basis_index: usize) -> C64 {
        let r = self.local_index(basis_index);
        self.entry(r, r)
    }

    fn check_sites(&self, n_qubits: usize) -> Result<()> {
        match self.sites.iter().find(|&&s| s >= n_qubits) {
            Some(&s) => Err(Error::QubitOutOfRange { index: s, n_qubits }),
            None => Ok(()),
        }
    }

    /// `output += coefficient * matrix |input>` over a full register.
    pub fn apply_into(&self, input: &[C64], output: &mut [C64]) -> Result<()> {
        let n_qubits = input.len().trailing_zeros() as usize;
        self.check_sites(n_qubits)?;
        let d = self.dim();
        let mask: usize = self.sites.iter().map(|s| 1usize << s).sum();
        let offsets: Vec<usize> = (0..d)
            .map(|r| self.sites.iter().enumerate().map(|(j, &s)| (r >> j & 1) << s).sum())
            .collect();
        let scaled: Vec<C64> = self.matrix.iter().map(|m| m * self.coefficient).collect();
        let mut gathered = vec![ZERO; d];
        for base in 0..input.len() {
            if base & mask != 0 {
                continue;
            }
            for (g, off) in gathered.iter_mut().zip(&offsets) {
                *g = input[base | off];
            }
            for r in 0..d {
                let row = &scaled[r * d..(r + 1) * d];
                let acc: C64 = row.iter().zip(&gathered).map(|(m, a)| m * a).sum();
                output[base | offsets[r]] += acc;
            }
        }
        Ok(())
    }

    /// Dense `2^n x 2^n` matrix of this term on an `n`-qubit register.
    pub fn dense(&self, n_qubits: usize) -> Result<CMatrix> {
        self.check_sites(n_qubits)?;
        let dim = 1usize << n_qubits;
        let mask: usize = self.sites.iter().map(|s| 1usize << s).sum();
        Ok(CMatrix::from_fn(dim, dim, |i, j| {
            if i & !mask != j & !mask {
                ZERO
            } else {
                self.entry(self.local_index(i), self.local_index(j))
            }
        }))
    }
}

/// Sum of local terms, applied without forming the full matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OperatorSum {
    pub terms: Vec<LocalTerm>,
}

impl OperatorSum {
    pub fn new(terms: Vec<LocalTerm>) -> Self {
        Self { terms }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn apply_vec(&self, input: &[C64]) -> Result<Vec<C64>> {
        let mut out = vec![ZERO; input.len()];
        for t in &self.terms {
            t.apply_into(input, &mut out)?;
        }
        Ok(out)
    }

    /// `sum_terms |psi>`, unnormalised. The state is left unchanged.
    pub fn apply(&self, state: &QuantumState) -> Result<Vec<C64>> {
        self.apply_vec(state.amplitudes())
    }

    pub fn dense(&self, n_qubits: usize) -> Result<CMatrix> {
        let dim = 1usize << n_qubits;
        let mut m = CMatrix::zeros(dim, dim);
        for t in &self.terms {
            m += t.dense(n_qubits)?;
        }
        Ok(m)
    }

    pub fn is_diagonal(&self) -> bool {
        self.terms.iter().all(|t| t.is_diagonal(1e-14))
    }

    /// Value of a diagonal operator on a basis state.
    pub fn diagonal_value(&self, basis_index: usize) -> f64 {
        self.terms.iter().map(|t| t.diagonal_value(basis_index).re).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpKind {
    Decay,
    Branching,
    Coagulation,
    Custom,
}

/// A Lindblad operator together with its `L^dagger L`.
#[derive(Clone, Debug, PartialEq)]
pub struct LindbladDescriptor {
    pub kind: JumpKind,
    /// `[l]` for decay, `[m, l]` (m conditions l) otherwise.
    pub sites: Vec<usize>,
    pub rate: f64,
    pub l: LocalTerm,
    pub ldagl: LocalTerm,
}

impl LindbladDescriptor {
    pub fn decay(site: usize, gamma: f64) -> Self {
        Self {
            kind: JumpKind::Decay,
            sites: vec![site],
            rate: gamma,
            l: LocalTerm::single(site, sigma_minus(), C64::new(gamma.sqrt(), 0.0), "sigma-"),
            ldagl: LocalTerm::single(site, number(), C64::new(gamma, 0.0), "n"),
        }
    }

    pub fn branching(m: usize, l: usize, kappa: f64) -> Result<Self> {
        Ok(Self {
            kind: JumpKind::Branching,
            sites: vec![m, l],
            rate: kappa,
            l: LocalTerm::pair(m, number(), l, sigma_plus(), C64::new(kappa.sqrt(), 0.0), "n*sigma+")?,
            ldagl: LocalTerm::pair(m, number(), l, vacancy(), C64::new(kappa, 0.0), "n*(1-n)")?,
        })
    }

    pub fn coagulation(m: usize, l: usize, kappa: f64) -> Result<Self> {
        Ok(Self {
            kind: JumpKind::Coagulation,
            sites: vec![m, l],
            rate: kappa,
            l: LocalTerm::pair(m, number(), l, sigma_minus(), C64::new(kappa.sqrt(), 0.0), "n*sigma-")?,
            ldagl: LocalTerm::pair(m, number(), l, number(), C64::new(kappa, 0.0), "n*n")?,
        })
    }

    /// Arbitrary jump operator; `L^dagger L` is formed from `l`.
    pub fn custom(l: LocalTerm, rate: f64) -> Self {
        let d = l.dim();
        let mut prod = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                prod[r * d + c] = (0..d).map(|k| l.entry(k, r).conj() * l.entry(k, c)).sum();
            }
        }
        let ldagl = LocalTerm {
            sites: l.sites.clone(),
            matrix: prod,
            coefficient: ONE,
            label: format!("{}^dag {}", l.label, l.label),
        };
        Self { kind: JumpKind::Custom, sites: l.sites.clone(), rate, l, ldagl }
    }
}

pub fn sum_ldagl(lindblads: &[LindbladDescriptor]) -> OperatorSum {
    OperatorSum::new(lindblads.iter().map(|d| d.ldagl.clone()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dti,
    Qcp,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dti" => Ok(Self::Dti),
            "qcp" => Ok(Self::Qcp),
            other => Err(Error::InvalidConfig(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dti => "dti",
            Self::Qcp => "qcp",
        })
    }
}

/// Open-boundary chain parameters. Unused couplings are ignored by the
/// other model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelKind,
    pub n: usize,
    pub j: f64,
    pub delta: f64,
    pub omega: f64,
    pub kappa: f64,
    pub gamma: f64,
}

impl ModelSpec {
    pub fn dti(n: usize, j: f64, delta: f64, gamma: f64) -> Self {
        Self { model: ModelKind::Dti, n, j, delta, omega: 0.0, kappa: 0.0, gamma }
    }

    pub fn qcp(n: usize, omega: f64, kappa: f64, gamma: f64) -> Self {
        Self { model: ModelKind::Qcp, n, j: 0.0, delta: 0.0, omega, kappa, gamma }
    }

    pub fn build(&self) -> Result<Model> {
        let (h, lindblads) = match self.model {
            ModelKind::Dti => build_dti(self.n, self.j, self.delta, self.gamma)?,
            ModelKind::Qcp => build_qcp(self.n, self.omega, self.kappa, self.gamma)?,
        };
        let sz = Observable { name: "sz".into(), op: site_average(self.n, pauli_z(), "z") };
        let n = Observable { name: "n".into(), op: site_average(self.n, number(), "n") };
        let observables = match self.model {
            ModelKind::Dti => vec![sz, n],
            ModelKind::Qcp => vec![n, sz],
        };
        Ok(Model { spec: self.clone(), h, lindblads, observables })
    }
}

/// Named observable recorded along trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    pub name: String,
    pub op: OperatorSum,
}

/// `(1/N) sum_l m_l`
pub fn site_average(n: usize, m: Matrix2, label: &str) -> OperatorSum {
    let w = C64::new(1.0 / n as f64, 0.0);
    OperatorSum::new((0..n).map(|l| LocalTerm::single(l, m, w, label)).collect())
}

/// A built model: Hamiltonian, jump operators and default observables.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub h: OperatorSum,
    pub lindblads: Vec<LindbladDescriptor>,
    pub observables: Vec<Observable>,
}

impl Model {
    pub fn n_sites(&self) -> usize {
        self.spec.n
    }

    pub fn max_rate(&self) -> f64 {
        self.lindblads.iter().map(|d| d.rate).fold(0.0, f64::max)
    }

    pub fn observable(&self, name: &str) -> Option<&Observable> {
        self.observables.iter().find(|o| o.name == name)
    }
}

fn check_rate(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidModel(format!("rate {name} = {value} must be finite and >= 0")));
    }
    Ok(())
}

fn check_coupling(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::InvalidModel(format!("coupling {name} = {value} is not finite")));
    }
    Ok(())
}

/// Dissipative transverse-field Ising chain,
/// `H = -J sum_<m,l> z_l z_m + Delta sum_l x_l`, `L_l = sqrt(gamma) sigma^-_l`.
///
/// Bonds are undirected. Zero-valued couplings and rates produce no terms.
pub fn build_dti(n: usize, j: f64, delta: f64, gamma: f64) -> Result<(OperatorSum, Vec<LindbladDescriptor>)> {
    if n == 0 {
        return Err(Error::InvalidModel("N must be >= 1".into()));
    }
    check_coupling("J", j)?;
    check_coupling("Delta", delta)?;
    check_rate("gamma", gamma)?;
    let mut terms = Vec::new();
    if j != 0.0 {
        for i in 0..n - 1 {
            terms.push(LocalTerm::pair(i, pauli_z(), i + 1, pauli_z(), C64::new(-j, 0.0), "zz")?);
        }
    }
    if delta != 0.0 {
        for l in 0..n {
            terms.push(LocalTerm::single(l, pauli_x(), C64::new(delta, 0.0), "x"));
        }
    }
    let lindblads = if gamma > 0.0 { (0..n).map(|l| LindbladDescriptor::decay(l, gamma)).collect() } else { Vec::new() };
    Ok((OperatorSum::new(terms), lindblads))
}

/// Quantum contact process,
/// `H = omega sum_<m,l> n_m (sigma^+_l + sigma^-_l)` over directed bonds,
/// with decay, branching and coagulation jumps.
///
/// Descriptor order: decay `l = 0..N`, then branching, then coagulation,
/// each over directed pairs `(i, i+1), (i+1, i)` for `i = 0..N-1`.
pub fn build_qcp(n: usize, omega: f64, kappa: f64, gamma: f64) -> Result<(OperatorSum, Vec<LindbladDescriptor>)> {
    if n == 0 {
        return Err(Error::InvalidModel("N must be >= 1".into()));
    }
    check_rate("omega", omega)?;
    check_rate("kappa", kappa)?;
    check_rate("gamma", gamma)?;
    let pairs: Vec<(usize, usize)> = (0..n.saturating_sub(1)).flat_map(|i| [(i, i + 1), (i + 1, i)]).collect();
    let mut terms = Vec::new();
    if omega != 0.0 {
        for &(m, l) in &pairs {
            terms.push(LocalTerm::pair(m, number(), l, pauli_x(), C64::new(omega, 0.0), "n*x")?);
        }
    }
    let mut lindblads = Vec::new();
    if gamma > 0.0 {
        lindblads.extend((0..n).map(|l| LindbladDescriptor::decay(l, gamma)));
    }
    if kappa > 0.0 {
        for &(m, l) in &pairs {
            lindblads.push(LindbladDescriptor::branching(m, l, kappa)?);
        }
        for &(m, l) in &pairs {
            lindblads.push(LindbladDescriptor::coagulation(m, l, kappa)?);
        }
    }
    Ok((OperatorSum::new(terms), lindblads))
}
