//! Candidate-function dictionaries and the regression design matrices built
//! from them.
//!
//! A node's coefficient vector `w_i` has length `M1 + M2`: the first `M1`
//! entries weight the self bases `F_m(x_i)` and the remaining `M2` weight the
//! pair bases `G_m(x_i, x_j)`, which enter through `Σ_j A_ij G_m(x_i, x_j)`.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{hill, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelfBasis {
    Const,
    /// `x_i^p`, `p >= 1`.
    Power(u32),
    Sin,
    Cos,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairBasis {
    /// `x_j^p`, `p >= 1`.
    Power(u32),
    /// `x_i · x_j`
    Product,
    /// `sin(x_j − x_i)`
    SinDiff,
    /// `x_j^h / (1 + x_j^h)`
    Hill(f64),
    /// `(1 − x_i) · x_j`
    Infection,
}

impl SelfBasis {
    #[inline]
    pub fn eval(self, xi: f64) -> f64 {
        match self {
            SelfBasis::Const => 1.0,
            SelfBasis::Power(1) => xi,
            SelfBasis::Power(2) => xi * xi,
            SelfBasis::Power(p) => xi.powi(p as i32),
            SelfBasis::Sin => xi.sin(),
            SelfBasis::Cos => xi.cos(),
        }
    }

    pub fn key(self) -> String {
        match self {
            SelfBasis::Const => "const".into(),
            SelfBasis::Power(1) => "x".into(),
            SelfBasis::Power(p) => format!("x^{p}"),
            SelfBasis::Sin => "sin".into(),
            SelfBasis::Cos => "cos".into(),
        }
    }

    /// Human-readable term for node `i`; empty for the constant.
    pub fn term(self, i: usize) -> String {
        match self {
            SelfBasis::Const => String::new(),
            SelfBasis::Power(1) => format!("x_{i}"),
            SelfBasis::Power(p) => format!("x_{i}^{p}"),
            SelfBasis::Sin => format!("sin(x_{i})"),
            SelfBasis::Cos => format!("cos(x_{i})"),
        }
    }

    /// Parses one key; `poly:k` expands to `const, x, ..., x^k`.
    pub fn parse(key: &str) -> Result<Vec<SelfBasis>> {
        let key = key.trim();
        let one = match key {
            "const" | "1" => SelfBasis::Const,
            "x" | "xi" => SelfBasis::Power(1),
            "sin" => SelfBasis::Sin,
            "cos" => SelfBasis::Cos,
            _ => {
                if let Some(k) = key.strip_prefix("poly:") {
                    let k = parse_degree(key, k)?;
                    let mut v = vec![SelfBasis::Const];
                    v.extend((1..=k).map(SelfBasis::Power));
                    return Ok(v);
                }
                let p = key
                    .strip_prefix("x^")
                    .or_else(|| key.strip_prefix("xi^"))
                    .ok_or_else(|| unknown_key("self", key))?;
                SelfBasis::Power(parse_degree(key, p)?)
            }
        };
        Ok(vec![one])
    }
}

impl PairBasis {
    #[inline]
    pub fn eval(self, xi: f64, xj: f64) -> f64 {
        match self {
            PairBasis::Power(1) => xj,
            PairBasis::Power(2) => xj * xj,
            PairBasis::Power(p) => xj.powi(p as i32),
            PairBasis::Product => xi * xj,
            PairBasis::SinDiff => (xj - xi).sin(),
            PairBasis::Hill(h) => hill(xj, h),
            PairBasis::Infection => (1.0 - xi) * xj,
        }
    }

    pub fn key(self) -> String {
        match self {
            PairBasis::Power(1) => "xj".into(),
            PairBasis::Power(p) => format!("xj^{p}"),
            PairBasis::Product => "xi*xj".into(),
            PairBasis::SinDiff => "sin_diff".into(),
            PairBasis::Hill(h) if h.fract() == 0.0 => format!("hill{}", h as i64),
            PairBasis::Hill(h) => format!("hill:{h}"),
            PairBasis::Infection => "xj*(1-xi)".into(),
        }
    }

    /// Human-readable term for node `i` with a free neighbour `x_j`.
    pub fn term(self, i: usize) -> String {
        match self {
            PairBasis::Power(1) => "x_j".into(),
            PairBasis::Power(p) => format!("x_j^{p}"),
            PairBasis::Product => format!("x_{i}*x_j"),
            PairBasis::SinDiff => format!("sin(x_j-x_{i})"),
            PairBasis::Hill(h) => format!("x_j^{h}/(1+x_j^{h})"),
            PairBasis::Infection => format!("(1-x_{i})*x_j"),
        }
    }

    /// Parses one key; `poly:k` expands to `xj, ..., xj^k`.
    pub fn parse(key: &str) -> Result<Vec<PairBasis>> {
        let key = key.trim();
        let one = match key {
            "xj" | "x_j" => PairBasis::Power(1),
            "xi*xj" | "xixj" => PairBasis::Product,
            "sin_diff" => PairBasis::SinDiff,
            "xj*(1-xi)" | "infection" => PairBasis::Infection,
            _ => {
                if let Some(k) = key.strip_prefix("poly:") {
                    let k = parse_degree(key, k)?;
                    return Ok((1..=k).map(PairBasis::Power).collect());
                }
                if let Some(h) = key.strip_prefix("hill:").or_else(|| key.strip_prefix("hill")) {
                    let h: f64 = h
                        .parse()
                        .map_err(|_| Error::Config(format!("bad Hill exponent in basis key '{key}'")))?;
                    if !(h >= 1.0) {
                        return Err(Error::Config(format!("Hill exponent must be >= 1 in '{key}'")));
                    }
                    PairBasis::Hill(h)
                } else {
                    let p = key.strip_prefix("xj^").ok_or_else(|| unknown_key("pair", key))?;
                    PairBasis::Power(parse_degree(key, p)?)
                }
            }
        };
        Ok(vec![one])
    }
}

fn parse_degree(key: &str, s: &str) -> Result<u32> {
    match s.parse::<u32>() {
        Ok(p) if p >= 1 => Ok(p),
        _ => Err(Error::Config(format!("bad degree in basis key '{key}'"))),
    }
}

fn unknown_key(kind: &str, key: &str) -> Error {
    Error::Config(format!("unknown {kind} basis key '{key}'"))
}

/// Ordered self and pair dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisLibrary {
    pub self_bases: Vec<SelfBasis>,
    pub pair_bases: Vec<PairBasis>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryKeys {
    #[serde(rename = "self")]
    self_keys: Vec<String>,
    pair: Vec<String>,
}

impl Serialize for BasisLibrary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LibraryKeys {
            self_keys: self.self_bases.iter().map(|b| b.key()).collect(),
            pair: self.pair_bases.iter().map(|b| b.key()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BasisLibrary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let keys = LibraryKeys::deserialize(d)?;
        BasisLibrary::from_keys(&keys.self_keys, &keys.pair).map_err(serde::de::Error::custom)
    }
}

impl BasisLibrary {
    pub fn new(self_bases: Vec<SelfBasis>, pair_bases: Vec<PairBasis>) -> Result<Self> {
        let lib = Self { self_bases, pair_bases };
        lib.validate()?;
        Ok(lib)
    }

    pub fn from_keys<S: AsRef<str>>(self_keys: &[S], pair_keys: &[S]) -> Result<Self> {
        let mut self_bases = Vec::new();
        for k in self_keys {
            self_bases.extend(SelfBasis::parse(k.as_ref())?);
        }
        let mut pair_bases = Vec::new();
        for k in pair_keys {
            pair_bases.extend(PairBasis::parse(k.as_ref())?);
        }
        Self::new(self_bases, pair_bases)
    }

    /// Reads a `{"self": [...], "pair": [...]}` key listing.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.self_bases.is_empty() || self.pair_bases.is_empty() {
            return Err(Error::Config(
                "a library needs at least one self and one pair basis".into(),
            ));
        }
        let names = self.names();
        for (k, name) in names.iter().enumerate() {
            if names[..k].contains(name) {
                return Err(Error::Config(format!("duplicate basis '{name}'")));
            }
        }
        Ok(())
    }

    pub fn m1(&self) -> usize {
        self.self_bases.len()
    }

    pub fn m2(&self) -> usize {
        self.pair_bases.len()
    }

    pub fn width(&self) -> usize {
        self.m1() + self.m2()
    }

    /// Column names: self keys, then pair keys prefixed with `pair:`.
    pub fn names(&self) -> Vec<String> {
        self.self_bases
            .iter()
            .map(|b| b.key())
            .chain(self.pair_bases.iter().map(|b| format!("pair:{}", b.key())))
            .collect()
    }

    /// Column index of a name as returned by [`names`](Self::names).
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| n == name)
    }

    /// `[1, x, x²]` self bases and
    /// `[x_j, x_i x_j, x_j², sin(x_j − x_i), x_j²/(1+x_j²), (1 − x_i) x_j]`
    /// pair bases.
    pub fn default_library() -> Self {
        Self::default_with_hill(2.0)
    }

    /// The default library with the saturating term at Hill exponent `h`.
    pub fn default_with_hill(h: f64) -> Self {
        Self {
            self_bases: vec![SelfBasis::Const, SelfBasis::Power(1), SelfBasis::Power(2)],
            pair_bases: vec![
                PairBasis::Power(1),
                PairBasis::Product,
                PairBasis::Power(2),
                PairBasis::SinDiff,
                PairBasis::Hill(h),
                PairBasis::Infection,
            ],
        }
    }

    /// Model output Σ_m w_m F_m(x_i) + Σ_m w_{M1+m} Σ_j A_ij G_m(x_i, x_j)
    /// for every node.
    pub fn model_rhs_into(&self, w: &DMatrix<f64>, a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let m1 = self.m1();
        for i in 0..n {
            let xi = x[i];
            let mut acc = 0.0;
            for (m, b) in self.self_bases.iter().enumerate() {
                let c = w[(i, m)];
                if c != 0.0 {
                    acc += c * b.eval(xi);
                }
            }
            for j in 0..n {
                let aij = a[(i, j)];
                if aij == 0.0 {
                    continue;
                }
                let mut g = 0.0;
                for (m, b) in self.pair_bases.iter().enumerate() {
                    let c = w[(i, m1 + m)];
                    if c != 0.0 {
                        g += c * b.eval(xi, x[j]);
                    }
                }
                acc += aij * g;
            }
            out[i] = acc;
        }
    }

    /// Renders node `i`'s identified equation, e.g.
    /// `dx_3/dt = -0.498*x_3 + Σ_j A_3j * 0.199*(1-x_3)*x_j`.
    pub fn equation(&self, i: usize, coeffs: &[f64]) -> String {
        let m1 = self.m1();
        let mut self_terms = Vec::new();
        for (m, b) in self.self_bases.iter().enumerate() {
            if coeffs[m] != 0.0 {
                self_terms.push(signed_term(coeffs[m], &b.term(i)));
            }
        }
        let mut pair_terms = Vec::new();
        for (m, b) in self.pair_bases.iter().enumerate() {
            if coeffs[m1 + m] != 0.0 {
                pair_terms.push(signed_term(coeffs[m1 + m], &b.term(i)));
            }
        }
        let mut rhs = join_terms(&self_terms);
        if !pair_terms.is_empty() {
            let inner = join_terms(&pair_terms);
            let inner = if pair_terms.len() > 1 {
                format!("({inner})")
            } else {
                inner
            };
            let sum = format!("Σ_j A_{i}j * {inner}");
            rhs = if rhs.is_empty() { sum } else { format!("{rhs} + {sum}") };
        }
        if rhs.is_empty() {
            rhs = "0".into();
        }
        format!("dx_{i}/dt = {rhs}")
    }
}

fn signed_term(c: f64, term: &str) -> String {
    if term.is_empty() {
        format!("{c:.6}")
    } else {
        format!("{c:.6}*{term}")
    }
}

fn join_terms(terms: &[String]) -> String {
    let mut s = String::new();
    for (k, t) in terms.iter().enumerate() {
        if k == 0 {
            s.push_str(t);
        } else if let Some(rest) = t.strip_prefix('-') {
            s.push_str(" - ");
            s.push_str(rest);
        } else {
            s.push_str(" + ");
            s.push_str(t);
        }
    }
    s
}

impl fmt::Display for BasisLibrary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.names().join(", "))
    }
}

/// Linear regression system `target ≈ entries · z`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub entries: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl DesignMatrix {
    pub fn new(entries: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        if entries.nrows() != target.len() {
            return Err(Error::Shape(format!(
                "design has {} rows but target has {}",
                entries.nrows(),
                target.len()
            )));
        }
        if entries.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("design matrix contains non-finite entries".into()));
        }
        Ok(Self { entries, target })
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }
}

/// Basis evaluations for one node over a whole trajectory.
///
/// `self_cols` is T×M1; `pair[m]` is T×N with `pair[m][(t, j)] =
/// G_m(x_i(t), x_j(t))`.
#[derive(Debug, Clone)]
pub struct NodeFeatures {
    pub node: usize,
    pub self_cols: DMatrix<f64>,
    pub pair: Vec<DMatrix<f64>>,
    pub target: DVector<f64>,
}

impl NodeFeatures {
    pub fn new(lib: &BasisLibrary, traj: &Trajectory, i: usize) -> Result<Self> {
        let deriv = traj
            .derivatives
            .as_ref()
            .ok_or_else(|| Error::Precondition("trajectory has no derivative series".into()))?;
        if i >= traj.n() {
            return Err(Error::Shape(format!("node {i} out of range for {} nodes", traj.n())));
        }
        let x = &traj.states;
        let t_len = traj.len();
        let n = traj.n();
        let self_cols = DMatrix::from_fn(t_len, lib.m1(), |t, m| lib.self_bases[m].eval(x[(t, i)]));
        let pair = lib
            .pair_bases
            .iter()
            .map(|b| DMatrix::from_fn(t_len, n, |t, j| b.eval(x[(t, i)], x[(t, j)])))
            .collect();
        let target = deriv.column(i).into_owned();
        Ok(Self {
            node: i,
            self_cols,
            pair,
            target,
        })
    }

    pub fn samples(&self) -> usize {
        self.target.len()
    }

    /// Design in `w_i` for a fixed adjacency row.
    pub fn w_design(&self, a_row: &[f64]) -> DesignMatrix {
        let m1 = self.self_cols.ncols();
        let m2 = self.pair.len();
        let t_len = self.samples();
        let mut entries = DMatrix::zeros(t_len, m1 + m2);
        entries.columns_mut(0, m1).copy_from(&self.self_cols);
        for (m, g) in self.pair.iter().enumerate() {
            let mut col = entries.column_mut(m1 + m);
            for (j, &aij) in a_row.iter().enumerate() {
                if aij != 0.0 && j != self.node {
                    col.axpy(aij, &g.column(j), 1.0);
                }
            }
        }
        DesignMatrix {
            entries,
            target: self.target.clone(),
        }
    }

    /// Design in `A_i` for fixed coefficients; the self column is zero.
    pub fn a_design(&self, w_i: &[f64]) -> DesignMatrix {
        let m1 = self.self_cols.ncols();
        let t_len = self.samples();
        let n = self.pair.first().map_or(0, |g| g.ncols());
        let mut entries = DMatrix::zeros(t_len, n);
        for (m, g) in self.pair.iter().enumerate() {
            let c = w_i[m1 + m];
            if c != 0.0 {
                entries += g * c;
            }
        }
        entries.column_mut(self.node).fill(0.0);
        let w_self = DVector::from_column_slice(&w_i[..m1]);
        let target = &self.target - &self.self_cols * w_self;
        DesignMatrix { entries, target }
    }

    /// Model output for this node at every sample.
    pub fn predict(&self, w_i: &[f64], a_row: &[f64]) -> DVector<f64> {
        let d = self.w_design(a_row);
        d.entries * DVector::from_column_slice(w_i)
    }
}

fn check_width(lib: &BasisLibrary, w_i: &[f64]) -> Result<()> {
    if w_i.len() != lib.width() {
        return Err(Error::Shape(format!(
            "coefficient vector has {} entries, library has {}",
            w_i.len(),
            lib.width()
        )));
    }
    Ok(())
}

/// Linear system in `w_i`: columns `F_m(x_i(t))` then
/// `Σ_j A_row[j] G_m(x_i(t), x_j(t))`; target `ẋ_i(t)`.
pub fn assemble_w_design(lib: &BasisLibrary, traj: &Trajectory, i: usize, a_row: &[f64]) -> Result<DesignMatrix> {
    if a_row.len() != traj.n() {
        return Err(Error::Shape(format!(
            "adjacency row has {} entries, trajectory has {} nodes",
            a_row.len(),
            traj.n()
        )));
    }
    if a_row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Precondition(
            "adjacency row must be finite and nonnegative".into(),
        ));
    }
    Ok(NodeFeatures::new(lib, traj, i)?.w_design(a_row))
}

/// Linear system in `A_i`: column `j` is `Σ_m w_i[M1+m] G_m(x_i(t), x_j(t))`
/// (zero for `j = i`); target `ẋ_i(t) − Σ_m w_i[m] F_m(x_i(t))`.
pub fn assemble_a_design(lib: &BasisLibrary, traj: &Trajectory, i: usize, w_i: &[f64]) -> Result<DesignMatrix> {
    check_width(lib, w_i)?;
    Ok(NodeFeatures::new(lib, traj, i)?.a_design(w_i))
}
