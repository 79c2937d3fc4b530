//! Dynamic-graph ingestion and preprocessing: temporal edge lists become a
//! node universe with `T` snapshots, a binary adjacency tensor in sparse
//! per-slice form, and the observed weight entries that training and
//! evaluation consume. Also builds the degree and normalized adjacency
//! tensors, splits observed entries train/validation/test, and generates
//! seeded synthetic graphs for experiments.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BandedLowerMatrix, Matrix, Tensor3};

/// One observed link weight: `Y[i, j, t] = weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedEntry {
    pub i: usize,
    pub j: usize,
    pub t: usize,
    pub weight: f64,
}

/// Compressed sparse rows for one frontal slice; `cols` within a row are
/// sorted and unique.
#[derive(Debug, Clone, PartialEq, Default)]
struct CsrSlice {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
}

impl CsrSlice {
    fn from_links(nodes: usize, links: &BTreeSet<(usize, usize)>) -> Self {
        let mut row_ptr = Vec::with_capacity(nodes + 1);
        let mut cols = Vec::with_capacity(links.len());
        row_ptr.push(0);
        let mut row = 0;
        for &(i, j) in links {
            while row < i {
                row_ptr.push(cols.len());
                row += 1;
            }
            cols.push(j);
        }
        while row < nodes {
            row_ptr.push(cols.len());
            row += 1;
        }
        CsrSlice { row_ptr, cols }
    }

    fn row(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }
}

/// Binary adjacency per time slice: presence means 1, absence means 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    nodes: usize,
    slices: Vec<CsrSlice>,
}

impl SparseAdjacency {
    /// Build from directed links `(i, j, t)`; duplicates collapse.
    pub fn from_links(nodes: usize, snapshots: usize, links: &[(usize, usize, usize)]) -> Self {
        let mut per_slice: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); snapshots];
        for &(i, j, t) in links {
            per_slice[t].insert((i, j));
        }
        SparseAdjacency {
            nodes,
            slices: per_slice
                .iter()
                .map(|s| CsrSlice::from_links(nodes, s))
                .collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn snapshot_count(&self) -> usize {
        self.slices.len()
    }

    /// Out-neighbors of `i` in slice `t`, sorted by column.
    pub fn neighbors(&self, i: usize, t: usize) -> &[usize] {
        self.slices[t].row(i)
    }

    pub fn has_link(&self, i: usize, j: usize, t: usize) -> bool {
        self.neighbors(i, t).binary_search(&j).is_ok()
    }

    pub fn out_degree(&self, i: usize, t: usize) -> usize {
        self.neighbors(i, t).len()
    }

    pub fn link_count(&self, t: usize) -> usize {
        self.slices[t].cols.len()
    }
}

/// Diagonal degree tensor in compact form: only the `N x T` diagonal is
/// stored, every off-diagonal entry is zero by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeTensor {
    nodes: usize,
    snapshots: usize,
    diag: Vec<f64>,
}

impl DegreeTensor {
    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.diag[t * self.nodes + i]
    }

    /// Expand to a full (mostly zero) tensor; handy for oracle checks.
    pub fn to_tensor3(&self) -> Tensor3 {
        Tensor3::from_fn(self.nodes, self.nodes, self.snapshots, |i, j, t| {
            if i == j {
                self.get(i, t)
            } else {
                0.0
            }
        })
    }
}

/// `D[i,i,t] = 1 + sum_n A[i,n,t]`: one plus the out-degree, per slice.
pub fn degree_tensor(adjacency: &SparseAdjacency) -> DegreeTensor {
    let nodes = adjacency.node_count();
    let snapshots = adjacency.snapshot_count();
    let mut diag = vec![0.0; nodes * snapshots];
    for t in 0..snapshots {
        for i in 0..nodes {
            diag[t * nodes + i] = 1.0 + adjacency.out_degree(i, t) as f64;
        }
    }
    DegreeTensor {
        nodes,
        snapshots,
        diag,
    }
}

/// Real-valued sparse slices: the normalized adjacency, and also any linear
/// combination of its slices produced by [`NormalizedAdjacency::mix`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    nodes: usize,
    slices: Vec<ValuedSlice>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct ValuedSlice {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl ValuedSlice {
    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }
}

impl NormalizedAdjacency {
    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn snapshot_count(&self) -> usize {
        self.slices.len()
    }

    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        let (cols, vals) = self.slices[t].row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    /// Sorted columns and values of row `i` in slice `t`.
    pub fn row(&self, i: usize, t: usize) -> (&[usize], &[f64]) {
        self.slices[t].row(i)
    }

    pub fn to_dense_slice(&self, t: usize) -> Matrix {
        let mut m = Matrix::zeros(self.nodes, self.nodes);
        for i in 0..self.nodes {
            let (cols, vals) = self.row(i, t);
            for (&j, &v) in cols.iter().zip(vals) {
                m.set(i, j, v);
            }
        }
        m
    }

    /// Linear mixing of slices: output slice `t` is
    /// `sum_k M[t,k] * slice k` over the band of `M`, kept sparse.
    pub fn mix(&self, m: &BandedLowerMatrix) -> Result<NormalizedAdjacency> {
        if m.order() != self.snapshot_count() {
            return Err(Error::Shape(format!(
                "mixing matrix order {} does not match snapshot count {}",
                m.order(),
                self.snapshot_count()
            )));
        }
        let mut slices = Vec::with_capacity(self.snapshot_count());
        for t in 0..self.snapshot_count() {
            let (lo, band) = m.row_band(t);
            let mut out = ValuedSlice::default();
            out.row_ptr.push(0);
            let mut merged: Vec<(usize, f64)> = Vec::new();
            for i in 0..self.nodes {
                merged.clear();
                for (off, &coeff) in band.iter().enumerate() {
                    let (cols, vals) = self.slices[lo + off].row(i);
                    for (&j, &v) in cols.iter().zip(vals) {
                        merged.push((j, coeff * v));
                    }
                }
                merged.sort_by_key(|&(j, _)| j);
                let mut idx = 0;
                while idx < merged.len() {
                    let (j, mut acc) = merged[idx];
                    idx += 1;
                    while idx < merged.len() && merged[idx].0 == j {
                        acc += merged[idx].1;
                        idx += 1;
                    }
                    out.cols.push(j);
                    out.vals.push(acc);
                }
                out.row_ptr.push(out.cols.len());
            }
            slices.push(out);
        }
        Ok(NormalizedAdjacency {
            nodes: self.nodes,
            slices,
        })
    }

    /// `out = slice_t * x` where `x` is dense `N x d` row-major.
    pub fn spmm_slice(&self, t: usize, x: &[f64], d: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nodes * d);
        debug_assert_eq!(out.len(), self.nodes * d);
        out.fill(0.0);
        for i in 0..self.nodes {
            let (cols, vals) = self.row(i, t);
            let dst = i * d;
            for (&j, &v) in cols.iter().zip(vals) {
                let src = j * d;
                for c in 0..d {
                    out[dst + c] += v * x[src + c];
                }
            }
        }
    }

    /// `out = slice_t^T * x`; the adjoint of [`Self::spmm_slice`].
    pub fn spmm_transpose_slice(&self, t: usize, x: &[f64], d: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nodes * d);
        debug_assert_eq!(out.len(), self.nodes * d);
        out.fill(0.0);
        for i in 0..self.nodes {
            let (cols, vals) = self.row(i, t);
            let src = i * d;
            for (&j, &v) in cols.iter().zip(vals) {
                let dst = j * d;
                for c in 0..d {
                    out[dst + c] += v * x[src + c];
                }
            }
        }
    }
}

/// Per-slice `D^{-1/2} (A + I) D^{-1/2}` with the degree tensor above;
/// self-loops are added, and every value lands in `(0, 1]`.
pub fn normalize_adjacency(adjacency: &SparseAdjacency) -> NormalizedAdjacency {
    let nodes = adjacency.node_count();
    let degrees = degree_tensor(adjacency);
    let mut slices = Vec::with_capacity(adjacency.snapshot_count());
    for t in 0..adjacency.snapshot_count() {
        let mut slice = ValuedSlice::default();
        slice.row_ptr.push(0);
        for i in 0..nodes {
            let d_i = degrees.get(i, t);
            let row = adjacency.neighbors(i, t);
            let mut insert_self = !row.contains(&i);
            for &j in row {
                if insert_self && j > i {
                    slice.cols.push(i);
                    slice.vals.push(1.0 / d_i);
                    insert_self = false;
                }
                let a_plus_i = if j == i { 2.0 } else { 1.0 };
                slice.cols.push(j);
                slice.vals.push(a_plus_i / (d_i * degrees.get(j, t)).sqrt());
            }
            if insert_self {
                slice.cols.push(i);
                slice.vals.push(1.0 / d_i);
            }
            slice.row_ptr.push(slice.cols.len());
        }
        slices.push(slice);
    }
    NormalizedAdjacency { nodes, slices }
}

/// Which partition an observed entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Validation => write!(f, "validation"),
            SplitTag::Test => write!(f, "test"),
        }
    }
}

/// Partition of the observed entries, index-aligned with
/// [`DynamicGraph::observed`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    tags: Vec<SplitTag>,
    seed: u64,
}

impl SplitAssignment {
    pub fn tag(&self, entry_index: usize) -> SplitTag {
        self.tags[entry_index]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.tags.len())
            .filter(|&i| self.tags[i] == tag)
            .collect()
    }

    /// Observed entries carrying the given tag, in index order.
    pub fn entries(&self, graph: &DynamicGraph, tag: SplitTag) -> Vec<ObservedEntry> {
        self.indices(tag)
            .into_iter()
            .map(|i| graph.observed()[i])
            .collect()
    }
}

/// Shuffle observed entries with a seeded permutation and cut by the ratio:
/// the first `floor(n*a/(a+b+c))` go to train, the next `floor(n*b/...)`
/// to validation, the remainder to test.
pub fn split(
    graph: &DynamicGraph,
    ratio: (usize, usize, usize),
    seed: u64,
) -> Result<SplitAssignment> {
    let n = graph.observed().len();
    if n < 10 {
        return Err(Error::Data(format!(
            "need at least 10 observed entries to split, got {n}"
        )));
    }
    let (a, b, c) = ratio;
    let total = a + b + c;
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::InvalidArgument(
            "split ratio parts must all be positive".into(),
        ));
    }
    let n_train = n * a / total;
    let n_val = n * b / total;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut tags = vec![SplitTag::Test; n];
    for (pos, &idx) in order.iter().enumerate() {
        tags[idx] = if pos < n_train {
            SplitTag::Train
        } else if pos < n_train + n_val {
            SplitTag::Validation
        } else {
            SplitTag::Test
        };
    }
    Ok(SplitAssignment { tags, seed })
}

/// A dynamic graph: the shared node universe, `T` snapshots of binary
/// adjacency, and the observed weight entries.
///
/// Two graphs are equal when they describe the same labeled structure;
/// dense index assignment (which depends on label first-appearance order)
/// does not participate in equality.
#[derive(Debug, Clone)]
pub struct DynamicGraph {
    node_labels: Vec<String>,
    snapshots: usize,
    adjacency: SparseAdjacency,
    observed: Vec<ObservedEntry>,
}

impl PartialEq for DynamicGraph {
    fn eq(&self, other: &Self) -> bool {
        if self.snapshots != other.snapshots {
            return false;
        }
        let mut labels_a = self.node_labels.clone();
        let mut labels_b = other.node_labels.clone();
        labels_a.sort();
        labels_b.sort();
        labels_a == labels_b && self.labeled_entries() == other.labeled_entries()
    }
}

impl DynamicGraph {
    /// Entries as `(src label, dst label, t, weight bits)`, sorted; the
    /// label-level normal form behind [`PartialEq`].
    fn labeled_entries(&self) -> Vec<(&str, &str, usize, u64)> {
        let mut v: Vec<(&str, &str, usize, u64)> = self
            .observed
            .iter()
            .map(|e| {
                (
                    self.node_labels[e.i].as_str(),
                    self.node_labels[e.j].as_str(),
                    e.t,
                    e.weight.to_bits(),
                )
            })
            .collect();
        v.sort();
        v
    }
}

impl DynamicGraph {
    /// Assemble from already-densified entries. Every observed entry also
    /// creates its adjacency link.
    pub fn from_entries(
        node_labels: Vec<String>,
        snapshots: usize,
        observed: Vec<ObservedEntry>,
    ) -> Result<Self> {
        let n = node_labels.len();
        let mut seen = HashSet::with_capacity(observed.len());
        for e in &observed {
            if e.i >= n || e.j >= n {
                return Err(Error::Data(format!(
                    "entry references node {} outside universe of {n}",
                    e.i.max(e.j)
                )));
            }
            if e.t >= snapshots {
                return Err(Error::Data(format!(
                    "entry references slice {} outside 0..{snapshots}",
                    e.t
                )));
            }
            if !e.weight.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite weight at ({}, {}, {})",
                    e.i, e.j, e.t
                )));
            }
            if !seen.insert((e.i, e.j, e.t)) {
                return Err(Error::Data(format!(
                    "duplicate entry for ({}, {}, {})",
                    node_labels[e.i], node_labels[e.j], e.t
                )));
            }
        }
        let links: Vec<(usize, usize, usize)> =
            observed.iter().map(|e| (e.i, e.j, e.t)).collect();
        let adjacency = SparseAdjacency::from_links(n, snapshots, &links);
        Ok(DynamicGraph {
            node_labels,
            snapshots,
            adjacency,
            observed,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_labels.len()
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshots
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn adjacency(&self) -> &SparseAdjacency {
        &self.adjacency
    }

    pub fn observed(&self) -> &[ObservedEntry] {
        &self.observed
    }

    /// Serialize as an edge list in canonical order (t, then i, then j).
    pub fn to_edge_list(&self, mut w: impl Write) -> Result<()> {
        let mut sorted: Vec<&ObservedEntry> = self.observed.iter().collect();
        sorted.sort_by_key(|e| (e.t, e.i, e.j));
        for e in sorted {
            writeln!(
                w,
                "{} {} {} {}",
                self.node_labels[e.i], self.node_labels[e.j], e.weight, e.t
            )?;
        }
        Ok(())
    }
}

/// Parse a temporal edge list: one `<src> <dst> <weight> <timestamp>` record
/// per line, `#` comments, blank lines ignored. Node labels are densified in
/// first-appearance order; distinct raw timestamps map to slices `0..T-1`
/// in ascending order.
pub fn load_edge_list(reader: impl BufRead) -> Result<DynamicGraph> {
    let mut labels: Vec<String> = Vec::new();
    let mut label_index: HashMap<String, usize> = HashMap::new();
    let mut raw_entries: Vec<(usize, usize, u64, f64)> = Vec::new();
    let mut seen: HashSet<(usize, usize, u64)> = HashSet::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 4 fields (src dst weight timestamp), got {}", fields.len()),
            });
        }
        let weight: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("weight `{}` is not a decimal number", fields[2]),
        })?;
        if !weight.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("weight `{}` is not finite", fields[2]),
            });
        }
        let stamp: u64 = fields[3].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("timestamp `{}` is not a non-negative integer", fields[3]),
        })?;
        let mut intern = |token: &str| -> usize {
            match label_index.get(token) {
                Some(&idx) => idx,
                None => {
                    let idx = labels.len();
                    labels.push(token.to_string());
                    label_index.insert(token.to_string(), idx);
                    idx
                }
            }
        };
        let src = intern(fields[0]);
        let dst = intern(fields[1]);
        if !seen.insert((src, dst, stamp)) {
            return Err(Error::Data(format!(
                "duplicate entry for ({}, {}, {})",
                fields[0], fields[1], stamp
            )));
        }
        raw_entries.push((src, dst, stamp, weight));
    }

    if raw_entries.is_empty() {
        return Err(Error::Data("edge list contains no records".into()));
    }

    let stamps: BTreeSet<u64> = raw_entries.iter().map(|e| e.2).collect();
    let stamp_to_slice: HashMap<u64, usize> =
        stamps.iter().enumerate().map(|(t, &s)| (s, t)).collect();
    let observed: Vec<ObservedEntry> = raw_entries
        .iter()
        .map(|&(i, j, s, weight)| ObservedEntry {
            i,
            j,
            t: stamp_to_slice[&s],
            weight,
        })
        .collect();
    DynamicGraph::from_entries(labels, stamps.len(), observed)
}

fn check_synth_args(nodes: usize, snapshots: usize, density: f64, lo: f64, hi: f64) -> Result<()> {
    if nodes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 nodes, got {nodes}"
        )));
    }
    if snapshots == 0 {
        return Err(Error::InvalidArgument("need at least 1 slice".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "weight range ({lo}, {hi}) is not a proper interval"
        )));
    }
    Ok(())
}

/// Draw the per-slice link structure: `floor(density*N^2)` distinct directed
/// non-self pairs (capped at the `N(N-1)` available), sorted canonically.
fn sample_slice_links(rng: &mut ChaCha8Rng, nodes: usize, density: f64) -> Vec<(usize, usize)> {
    let available = nodes * (nodes - 1);
    let want = ((density * (nodes * nodes) as f64).floor() as usize).min(available);
    let mut picks: Vec<usize> = rand::seq::index::sample(rng, available, want).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|idx| {
            let i = idx / (nodes - 1);
            let r = idx % (nodes - 1);
            let j = if r >= i { r + 1 } else { r };
            (i, j)
        })
        .collect()
}

fn synth_labels(nodes: usize) -> Vec<String> {
    (0..nodes).map(|i| format!("n{i}")).collect()
}

/// Seeded synthetic dynamic graph. Weights follow a smooth additive signal
/// in per-node phase functions of time, plus 5% bounded noise, so the graph
/// is learnable; every weight lies inside `weight_range`.
pub fn synth_generate(
    nodes: usize,
    snapshots: usize,
    density: f64,
    weight_range: (f64, f64),
    seed: u64,
) -> Result<DynamicGraph> {
    let (lo, hi) = weight_range;
    check_synth_args(nodes, snapshots, density, lo, hi)?;
    let mid = 0.5 * (lo + hi);
    let span = hi - lo;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = Vec::new();
    for t in 0..snapshots {
        let links = sample_slice_links(&mut rng, nodes, density);
        for (i, j) in links {
            let p = (0.9 * i as f64 + 0.7 * t as f64 + 0.4).sin();
            let q = (0.8 * j as f64 - 0.5 * t as f64 + 1.1).cos();
            let signal = 0.5 * (p + q);
            let noise: f64 = rng.gen_range(-1.0..1.0);
            let weight = mid + span * (0.45 * signal + 0.05 * noise);
            observed.push(ObservedEntry { i, j, t, weight });
        }
    }
    DynamicGraph::from_entries(synth_labels(nodes), snapshots, observed)
}

/// Synthetic graph whose weights carry a one-slice temporal dependence:
/// slice structures are sampled independently, and the weight of `(i, j, t)`
/// is an additive function of the endpoints' out-degree profiles in slices
/// `t-1` and `t` together (slice 0 uses its own profile twice). A model
/// whose band window reaches the previous snapshot sees the whole signal;
/// a static model can at best explain the current-slice half.
pub fn synth_generate_temporal(
    nodes: usize,
    snapshots: usize,
    density: f64,
    weight_range: (f64, f64),
    seed: u64,
) -> Result<DynamicGraph> {
    let (lo, hi) = weight_range;
    check_synth_args(nodes, snapshots, density, lo, hi)?;
    let mid = 0.5 * (lo + hi);
    let span = hi - lo;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_slice: Vec<Vec<(usize, usize)>> = (0..snapshots)
        .map(|_| sample_slice_links(&mut rng, nodes, density))
        .collect();
    // out-degree profile per slice, normalized to [0, 1]
    let mut profiles: Vec<Vec<f64>> = Vec::with_capacity(snapshots);
    for links in &per_slice {
        let mut deg = vec![0usize; nodes];
        for &(i, _) in links {
            deg[i] += 1;
        }
        let max = deg.iter().copied().max().unwrap_or(0).max(1) as f64;
        profiles.push(deg.iter().map(|&d| d as f64 / max).collect());
    }
    let mut observed = Vec::new();
    for (t, links) in per_slice.iter().enumerate() {
        let prev = t.saturating_sub(1);
        for &(i, j) in links {
            let node_effect = |n: usize| 0.5 * (profiles[prev][n] + profiles[t][n]);
            let signal = node_effect(i) + node_effect(j) - 1.0;
            let noise: f64 = rng.gen_range(-1.0..1.0);
            let weight = mid + span * (0.45 * signal + 0.05 * noise);
            observed.push(ObservedEntry { i, j, t, weight });
        }
    }
    DynamicGraph::from_entries(synth_labels(nodes), snapshots, observed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn load_str(text: &str) -> Result<DynamicGraph> {
        load_edge_list(Cursor::new(text.as_bytes()))
    }

    #[test]
    fn load_maps_labels_and_timestamps() {
        let g = load_str("a b 1.5 10\nb c 2.0 20\n").unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.snapshot_count(), 2);
        assert_eq!(g.node_labels(), &["a", "b", "c"]);
        assert_eq!(
            g.observed(),
            &[
                ObservedEntry { i: 0, j: 1, t: 0, weight: 1.5 },
                ObservedEntry { i: 1, j: 2, t: 1, weight: 2.0 },
            ]
        );
        assert!(g.adjacency().has_link(0, 1, 0));
        assert!(g.adjacency().has_link(1, 2, 1));
        assert!(!g.adjacency().has_link(0, 1, 1));
    }

    #[test]
    fn load_reports_parse_error_with_line_number() {
        match load_str("a b x 10\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match load_str("a b 1.0 10\nc d 2.0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_is_deterministic() {
        let text = "a b 1.5 10\n# comment\n\nb c 2.0 20 # trailing\nc a -3.25 10\n";
        let g1 = load_str(text).unwrap();
        let g2 = load_str(text).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn load_rejects_duplicates_and_empty() {
        match load_str("a b 1.0 5\na b 2.0 5\n") {
            Err(Error::Data(msg)) => assert!(msg.contains("a, b, 5"), "got {msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
        assert!(matches!(load_str("# nothing here\n"), Err(Error::Data(_))));
    }

    #[test]
    fn round_trip_preserves_canonical_form() {
        let text = "b a 2.0 7\na b 1.5 3\nc b 0.25 7\n";
        let g0 = load_str(text).unwrap();
        let mut buf = Vec::new();
        g0.to_edge_list(&mut buf).unwrap();
        let g1 = load_edge_list(Cursor::new(&buf)).unwrap();
        let mut buf2 = Vec::new();
        g1.to_edge_list(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        // labeled structure survives even though dense ids may be remapped
        let entries = |g: &DynamicGraph| {
            let mut v: Vec<(String, String, u64, usize)> = g
                .observed()
                .iter()
                .map(|e| {
                    (
                        g.node_labels()[e.i].clone(),
                        g.node_labels()[e.j].clone(),
                        e.weight.to_bits(),
                        e.t,
                    )
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(entries(&g0), entries(&g1));
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let g = synth_generate(5, 1, 0.5, (1.0, 2.0), 9).unwrap();
        assert_eq!(g.observed().len(), 12);
        let s = split(&g, (6, 1, 3), 0).unwrap();
        assert_eq!(s.count(SplitTag::Train), 7); // floor(12*0.6)
        assert_eq!(s.count(SplitTag::Validation), 1);
        assert_eq!(s.count(SplitTag::Test), 4);
    }

    #[test]
    fn split_exact_division_n10() {
        let g = synth_generate(4, 1, 0.63, (0.0, 1.0), 3).unwrap();
        assert_eq!(g.observed().len(), 10);
        let s = split(&g, (6, 1, 3), 123).unwrap();
        assert_eq!(s.count(SplitTag::Train), 6);
        assert_eq!(s.count(SplitTag::Validation), 1);
        assert_eq!(s.count(SplitTag::Test), 3);
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let g = synth_generate(10, 2, 0.5, (0.0, 1.0), 4).unwrap();
        let s1 = split(&g, (6, 1, 3), 99).unwrap();
        let s2 = split(&g, (6, 1, 3), 99).unwrap();
        assert_eq!(s1, s2);
        let s3 = split(&g, (6, 1, 3), 100).unwrap();
        assert_eq!(s1.count(SplitTag::Train), s3.count(SplitTag::Train));
        assert_ne!(s1, s3, "different seeds should permute membership");
    }

    #[test]
    fn split_requires_ten_entries() {
        let g = load_str("a b 1 1\nb c 1 1\nc a 1 1\n").unwrap();
        assert!(matches!(split(&g, (6, 1, 3), 0), Err(Error::Data(_))));
    }

    #[test]
    fn degree_counts_row_sums_plus_one() {
        // node 0 links to 1 and 2 in slice 0; slice 1 is empty
        let adj = SparseAdjacency::from_links(3, 2, &[(0, 1, 0), (0, 2, 0)]);
        let d = degree_tensor(&adj);
        assert_eq!(d.get(0, 0), 3.0);
        assert_eq!(d.get(1, 0), 1.0);
        assert_eq!(d.get(2, 0), 1.0);
        for i in 0..3 {
            assert_eq!(d.get(i, 1), 1.0);
        }
        let dense = d.to_tensor3();
        assert_eq!(dense.get(0, 1, 0), 0.0);
    }

    #[test]
    fn normalize_isolated_node_is_one() {
        let adj = SparseAdjacency::from_links(1, 1, &[]);
        let norm = normalize_adjacency(&adj);
        assert_eq!(norm.get(0, 0, 0), 1.0);
    }

    #[test]
    fn normalize_two_node_link_gives_halves() {
        let adj = SparseAdjacency::from_links(2, 1, &[(0, 1, 0), (1, 0, 0)]);
        let norm = normalize_adjacency(&adj);
        for i in 0..2 {
            for j in 0..2 {
                assert!((norm.get(i, j, 0) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalize_matches_dense_oracle() {
        let g = synth_generate(5, 3, 0.4, (0.0, 1.0), 21).unwrap();
        let adj = g.adjacency();
        let norm = normalize_adjacency(adj);
        for t in 0..3 {
            // dense D^{-1/2} (A + I) D^{-1/2}, built independently
            let n = 5;
            let mut deg = vec![1.0f64; n];
            for (i, d) in deg.iter_mut().enumerate() {
                *d += adj.out_degree(i, t) as f64;
            }
            for i in 0..n {
                for j in 0..n {
                    let a = if adj.has_link(i, j, t) { 1.0 } else { 0.0 };
                    let eye = if i == j { 1.0 } else { 0.0 };
                    let want = (a + eye) / (deg[i].sqrt() * deg[j].sqrt());
                    assert!(
                        (norm.get(i, j, t) - want).abs() < 1e-14,
                        "mismatch at ({i},{j},{t})"
                    );
                }
            }
        }
    }

    #[test]
    fn normalized_entries_live_in_unit_interval() {
        let g = synth_generate(8, 4, 0.3, (0.0, 1.0), 2).unwrap();
        let norm = normalize_adjacency(g.adjacency());
        for t in 0..4 {
            for i in 0..8 {
                let (cols, vals) = norm.row(i, t);
                for &v in vals {
                    assert!(v > 0.0 && v <= 1.0);
                }
                assert!(cols.contains(&i), "diagonal must be present");
                // support is exactly self plus out-neighbors
                for &j in cols {
                    assert!(j == i || g.adjacency().has_link(i, j, t));
                }
            }
        }
    }

    #[test]
    fn mixed_slices_combine_band_neighbors() {
        let adj = SparseAdjacency::from_links(3, 2, &[(0, 1, 0), (1, 2, 1)]);
        let norm = normalize_adjacency(&adj);
        let m = BandedLowerMatrix::from_rows(2, 2, vec![vec![1.0], vec![0.25, 0.75]]).unwrap();
        let mixed = norm.mix(&m).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = 0.25 * norm.get(i, j, 0) + 0.75 * norm.get(i, j, 1);
                assert!((mixed.get(i, j, 1) - want).abs() < 1e-15);
                assert!((mixed.get(i, j, 0) - norm.get(i, j, 0)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn spmm_matches_dense_multiply() {
        let g = synth_generate(6, 2, 0.4, (0.0, 1.0), 5).unwrap();
        let norm = normalize_adjacency(g.adjacency());
        let d = 3;
        let x: Vec<f64> = (0..6 * d).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut out = vec![0.0; 6 * d];
        norm.spmm_slice(1, &x, d, &mut out);
        let dense = norm.to_dense_slice(1);
        for i in 0..6 {
            for c in 0..d {
                let want: f64 = (0..6).map(|j| dense.get(i, j) * x[j * d + c]).sum();
                assert!((out[i * d + c] - want).abs() < 1e-12);
            }
        }
        let mut out_t = vec![0.0; 6 * d];
        norm.spmm_transpose_slice(1, &x, d, &mut out_t);
        for j in 0..6 {
            for c in 0..d {
                let want: f64 = (0..6).map(|i| dense.get(i, j) * x[i * d + c]).sum();
                assert!((out_t[j * d + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synth_full_density_two_nodes() {
        let g = synth_generate(2, 1, 1.0, (1.0, 2.0), 0).unwrap();
        let mut links: Vec<(usize, usize)> = g.observed().iter().map(|e| (e.i, e.j)).collect();
        links.sort_unstable();
        assert_eq!(links, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_generate(12, 4, 0.2, (1.0, 3.0), 77).unwrap();
        let b = synth_generate(12, 4, 0.2, (1.0, 3.0), 77).unwrap();
        assert_eq!(a, b);
        let c = synth_generate_temporal(12, 4, 0.2, (1.0, 3.0), 77).unwrap();
        let d = synth_generate_temporal(12, 4, 0.2, (1.0, 3.0), 77).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn synth_counts_and_bounds() {
        let g = synth_generate(20, 8, 0.15, (1.0, 3.0), 11).unwrap();
        for t in 0..8 {
            assert_eq!(g.adjacency().link_count(t), 60);
        }
        for e in g.observed() {
            assert!(e.weight >= 1.0 && e.weight <= 3.0);
            assert_ne!(e.i, e.j);
        }
        let g = synth_generate_temporal(20, 8, 0.15, (1.0, 3.0), 11).unwrap();
        for t in 0..8 {
            assert_eq!(g.adjacency().link_count(t), 60);
        }
        for e in g.observed() {
            assert!(e.weight >= 1.0 && e.weight <= 3.0);
            assert_ne!(e.i, e.j);
        }
    }

    #[test]
    fn synth_rejects_bad_arguments() {
        assert!(synth_generate(1, 1, 0.5, (0.0, 1.0), 0).is_err());
        assert!(synth_generate(3, 0, 0.5, (0.0, 1.0), 0).is_err());
        assert!(synth_generate(3, 1, 0.0, (0.0, 1.0), 0).is_err());
        assert!(synth_generate(3, 1, 1.5, (0.0, 1.0), 0).is_err());
        assert!(synth_generate(3, 1, 0.5, (2.0, 1.0), 0).is_err());
    }

    proptest! {
        #[test]
        fn prop_split_partitions_exactly(n_extra in 0usize..60, seed in 0u64..200) {
            let g = synth_generate(6, 3, 0.2 + (n_extra as f64) * 0.01, (0.0, 1.0), seed).unwrap();
            prop_assume!(g.observed().len() >= 10);
            let s = split(&g, (6, 1, 3), seed).unwrap();
            let n = g.observed().len();
            prop_assert_eq!(s.count(SplitTag::Train), n * 6 / 10);
            prop_assert_eq!(s.count(SplitTag::Validation), n / 10);
            prop_assert_eq!(
                s.count(SplitTag::Test),
                n - n * 6 / 10 - n / 10
            );
            prop_assert_eq!(s.len(), n);
        }

        #[test]
        fn prop_normalize_preserves_symmetry(seed in 0u64..200) {
            // build a symmetric slice by mirroring sampled links
            let g = synth_generate(7, 2, 0.25, (0.0, 1.0), seed).unwrap();
            let mut links: Vec<(usize, usize, usize)> = Vec::new();
            for t in 0..2 {
                for i in 0..7 {
                    for &j in g.adjacency().neighbors(i, t) {
                        links.push((i, j, t));
                        links.push((j, i, t));
                    }
                }
            }
            let sym = SparseAdjacency::from_links(7, 2, &links);
            let norm = normalize_adjacency(&sym);
            for t in 0..2 {
                for i in 0..7 {
                    for j in 0..7 {
                        prop_assert!((norm.get(i, j, t) - norm.get(j, i, t)).abs() < 1e-15);
                    }
                }
            }
        }
    }
}
