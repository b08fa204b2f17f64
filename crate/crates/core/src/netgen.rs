//! Ground-truth network generators.
//!
//! Erdős–Rényi and Watts–Strogatz graphs are emitted symmetric. The scale-free
//! generator follows the directed (α, β, γ) growth model and is directed unless
//! the caller asks for symmetrization.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense N×N nonnegative weight matrix with an empty diagonal.
///
/// Row `i` holds the weights with which every node `j` acts on node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    weights: DMatrix<f64>,
}

impl AdjacencyMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n, n),
        }
    }

    /// Wraps a square matrix, rejecting negative/non-finite entries and a
    /// nonzero diagonal.
    pub fn from_matrix(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::Shape(format!(
                "adjacency must be square, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        for i in 0..weights.nrows() {
            for j in 0..weights.ncols() {
                let v = weights[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Parameter(format!(
                        "adjacency entry ({i},{j}) = {v} is not a finite nonnegative number"
                    )));
                }
                if i == j && v != 0.0 {
                    return Err(Error::Parameter(format!(
                        "adjacency diagonal ({i},{i}) = {v} must be zero"
                    )));
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("adjacency rows must all have length n".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Sets an off-diagonal weight. Negative values are clamped to zero and
    /// diagonal writes are ignored.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        if i != j {
            self.weights[(i, j)] = v.max(0.0);
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.weights.row(i).iter().copied().collect()
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) {
        for (j, &v) in row.iter().enumerate() {
            self.set(i, j, v);
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.row(i)).collect()
    }

    /// Number of nonzero entries (directed edges).
    pub fn nnz(&self) -> usize {
        self.weights.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_symmetric(&self) -> bool {
        self.weights == self.weights.transpose()
    }

    /// Out-degree plus in-degree of every node, counting nonzero entries.
    pub fn total_degrees(&self) -> Vec<usize> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let out = (0..n).filter(|&j| self.get(i, j) != 0.0).count();
                let inn = (0..n).filter(|&j| self.get(j, i) != 0.0).count();
                out + inn
            })
            .collect()
    }

    /// Entrywise maximum with the transpose.
    pub fn symmetrized(&self) -> Self {
        let n = self.n();
        Self {
            weights: DMatrix::from_fn(n, n, |i, j| self.get(i, j).max(self.get(j, i))),
        }
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        Self {
            weights: DMatrix::from_fn(n, n, |i, j| self.get(perm[i], perm[j])),
        }
    }

    /// Connected components of the underlying undirected graph.
    pub fn weak_components(&self) -> usize {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if !seen[v] && (self.get(u, v) != 0.0 || self.get(v, u) != 0.0) {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }
}

impl Serialize for AdjacencyMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AdjacencyMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        AdjacencyMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    ErdosRenyi,
    WattsStrogatz,
    BarabasiAlbert,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 3] = [
        NetworkKind::ErdosRenyi,
        NetworkKind::WattsStrogatz,
        NetworkKind::BarabasiAlbert,
    ];

    pub fn key(self) -> &'static str {
        match self {
            NetworkKind::ErdosRenyi => "erdos-renyi",
            NetworkKind::WattsStrogatz => "watts-strogatz",
            NetworkKind::BarabasiAlbert => "barabasi-albert",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            NetworkKind::ErdosRenyi => "ER",
            NetworkKind::WattsStrogatz => "WS",
            NetworkKind::BarabasiAlbert => "BA",
        }
    }
}

impl std::str::FromStr for NetworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "erdos-renyi" | "er" => Ok(NetworkKind::ErdosRenyi),
            "watts-strogatz" | "ws" => Ok(NetworkKind::WattsStrogatz),
            "barabasi-albert" | "ba" | "scale-free" => Ok(NetworkKind::BarabasiAlbert),
            other => Err(Error::Config(format!(
                "unknown network '{other}'; valid names: erdos-renyi (er), watts-strogatz (ws), barabasi-albert (ba)"
            ))),
        }
    }
}

impl std::fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

fn default_kind() -> NetworkKind {
    NetworkKind::ErdosRenyi
}
fn default_n() -> usize {
    16
}
fn default_p() -> f64 {
    0.1
}
fn default_k() -> usize {
    4
}
fn default_alpha() -> f64 {
    0.41
}
fn default_beta() -> f64 {
    0.54
}
fn default_gamma() -> f64 {
    0.05
}
fn default_delta_in() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_kind")]
    pub kind: NetworkKind,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_p")]
    pub er_p: f64,
    #[serde(default = "default_k")]
    pub ws_k: usize,
    #[serde(default = "default_p")]
    pub ws_p: f64,
    #[serde(default = "default_alpha")]
    pub ba_alpha: f64,
    #[serde(default = "default_beta")]
    pub ba_beta: f64,
    #[serde(default = "default_gamma")]
    pub ba_gamma: f64,
    /// In-degree smoothing of the scale-free growth model.
    #[serde(default = "default_delta_in")]
    pub ba_delta_in: f64,
    /// Out-degree smoothing of the scale-free growth model.
    #[serde(default)]
    pub ba_delta_out: f64,
    /// Symmetrize the directed scale-free graph before use.
    #[serde(default)]
    pub symmetrize: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            n: default_n(),
            er_p: default_p(),
            ws_k: default_k(),
            ws_p: default_p(),
            ba_alpha: default_alpha(),
            ba_beta: default_beta(),
            ba_gamma: default_gamma(),
            ba_delta_in: default_delta_in(),
            ba_delta_out: 0.0,
            symmetrize: false,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("er_p", self.er_p)?;
        check_probability("ws_p", self.ws_p)?;
        if self.kind == NetworkKind::WattsStrogatz && (self.ws_k % 2 != 0 || self.ws_k >= self.n) {
            return Err(Error::Parameter(format!(
                "ws_k must be even and smaller than n (k={}, n={})",
                self.ws_k, self.n
            )));
        }
        let sum = self.ba_alpha + self.ba_beta + self.ba_gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "ba_alpha+ba_beta+ba_gamma = {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<AdjacencyMatrix> {
        self.validate()?;
        let a = match self.kind {
            NetworkKind::ErdosRenyi => gen_er(self.n, self.er_p, self.seed)?,
            NetworkKind::WattsStrogatz => gen_ws(self.n, self.ws_k, self.ws_p, self.seed)?,
            NetworkKind::BarabasiAlbert => gen_scale_free(
                self.n,
                ScaleFreeParams {
                    alpha: self.ba_alpha,
                    beta: self.ba_beta,
                    gamma: self.ba_gamma,
                    delta_in: self.ba_delta_in,
                    delta_out: self.ba_delta_out,
                },
                self.seed,
            )?,
        };
        Ok(if self.symmetrize { a.symmetrized() } else { a })
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

/// G(n, p): each unordered pair is linked independently with probability `p`.
pub fn gen_er(n: usize, p: f64, seed: u64) -> Result<AdjacencyMatrix> {
    check_probability("p", p)?;
    if n == 0 {
        return Err(Error::Parameter("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = AdjacencyMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    Ok(a)
}

/// Watts–Strogatz small world: ring lattice of degree `k`, then each lattice
/// edge `(u, u+d)` is rewired to `(u, w)` with probability `p`, `w` drawn
/// uniformly among nodes that are not `u` and not already adjacent to `u`.
pub fn gen_ws(n: usize, k: usize, p: f64, seed: u64) -> Result<AdjacencyMatrix> {
    check_probability("p", p)?;
    if k % 2 != 0 || k >= n {
        return Err(Error::Parameter(format!(
            "watts-strogatz degree must be even and smaller than n (k={k}, n={n})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = vec![vec![false; n]; n];
    for u in 0..n {
        for d in 1..=k / 2 {
            let v = (u + d) % n;
            adj[u][v] = true;
            adj[v][u] = true;
        }
    }
    for d in 1..=k / 2 {
        for u in 0..n {
            let v = (u + d) % n;
            if !adj[u][v] || rng.random::<f64>() >= p {
                continue;
            }
            let candidates: Vec<usize> = (0..n).filter(|&w| w != u && !adj[u][w]).collect();
            if candidates.is_empty() {
                continue;
            }
            let w = candidates[rng.random_range(0..candidates.len())];
            adj[u][v] = false;
            adj[v][u] = false;
            adj[u][w] = true;
            adj[w][u] = true;
        }
    }
    let mut a = AdjacencyMatrix::zeros(n);
    for (i, row) in adj.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            if e {
                a.set(i, j, 1.0);
            }
        }
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFreeParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta_in: f64,
    pub delta_out: f64,
}

impl Default for ScaleFreeParams {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            gamma: default_gamma(),
            delta_in: default_delta_in(),
            delta_out: 0.0,
        }
    }
}

/// Picks a node with probability proportional to `degree + delta`.
fn choose_by_degree(rng: &mut ChaCha8Rng, degree: &[usize], delta: f64) -> usize {
    let total: f64 = degree.iter().map(|&d| d as f64 + delta).sum();
    if total <= 0.0 {
        return rng.random_range(0..degree.len());
    }
    let mut r = rng.random::<f64>() * total;
    for (i, &d) in degree.iter().enumerate() {
        r -= d as f64 + delta;
        if r < 0.0 {
            return i;
        }
    }
    degree.len() - 1
}

/// Directed scale-free graph grown from a directed 3-cycle.
///
/// Each step draws `r ~ U[0,1)`:
/// * `r < α`: a new node links to an existing node chosen by in-degree;
/// * `r < α+β`: a new edge between existing nodes, source by out-degree and
///   target by in-degree;
/// * otherwise: an existing node chosen by out-degree links to a new node.
///
/// Growth stops once `n` nodes exist. Parallel edges collapse and self-loops
/// are dropped in the emitted matrix.
pub fn gen_scale_free(n: usize, params: ScaleFreeParams, seed: u64) -> Result<AdjacencyMatrix> {
    let ScaleFreeParams {
        alpha,
        beta,
        gamma,
        delta_in,
        delta_out,
    } = params;
    for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
        check_probability(name, v)?;
    }
    if (alpha + beta + gamma - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "alpha+beta+gamma = {}, expected 1",
            alpha + beta + gamma
        )));
    }
    if n < 3 {
        return Err(Error::Parameter(format!("scale-free generator needs n >= 3, got {n}")));
    }
    if delta_in < 0.0 || delta_out < 0.0 {
        return Err(Error::Parameter("degree offsets must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = vec![(0, 1), (1, 2), (2, 0)];
    let mut in_deg = vec![1usize; 3];
    let mut out_deg = vec![1usize; 3];
    while in_deg.len() < n {
        let r = rng.random::<f64>();
        let (src, dst) = if r < alpha {
            let dst = choose_by_degree(&mut rng, &in_deg, delta_in);
            in_deg.push(0);
            out_deg.push(0);
            (in_deg.len() - 1, dst)
        } else if r < alpha + beta {
            let src = choose_by_degree(&mut rng, &out_deg, delta_out);
            let dst = choose_by_degree(&mut rng, &in_deg, delta_in);
            (src, dst)
        } else {
            let src = choose_by_degree(&mut rng, &out_deg, delta_out);
            in_deg.push(0);
            out_deg.push(0);
            (src, in_deg.len() - 1)
        };
        out_deg[src] += 1;
        in_deg[dst] += 1;
        edges.push((src, dst));
    }
    let mut a = AdjacencyMatrix::zeros(n);
    for (s, d) in edges {
        a.set(s, d, 1.0);
    }
    Ok(a)
}
