//! Random DAG models and synthetic task construction.

use std::collections::HashSet;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dag::{transitive_closure, Dag, Edge};
use crate::error::{Error, Result};
use crate::filter::{build_filter, CausalFilter};
use crate::gso::{gso_set, AnchorSelection};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Diffusion,
    SourceId,
    Imputation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Observed (possibly noisy) signal and its noise-free version.
    Signal { observed: Vec<f64>, clean: Vec<f64> },
    /// Index into the dataset's candidate list.
    Label(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `n × F` model input.
    pub input: DMatrix<f64>,
    pub target: Target,
}

#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub dag: Dag,
    pub task: TaskKind,
    pub samples: Vec<Sample>,
    /// Nodes whose values reach the model; `None` means all.
    pub input_mask: Option<Vec<bool>>,
    /// Nodes scored by the loss and metrics; `None` means all.
    pub target_mask: Option<Vec<bool>>,
    /// Candidate source nodes for classification tasks.
    pub candidates: Vec<usize>,
    /// Set when the task carries no usable signal (every node masked).
    pub degenerate: bool,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n(&self) -> usize {
        self.dag.n()
    }

    pub fn features(&self) -> usize {
        self.samples.first().map_or(1, |s| s.input.ncols())
    }

    /// Same metadata, selected samples.
    pub fn subset(&self, idx: &[usize]) -> TaskDataset {
        TaskDataset {
            dag: self.dag.clone(),
            task: self.task,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            input_mask: self.input_mask.clone(),
            target_mask: self.target_mask.clone(),
            candidates: self.candidates.clone(),
            degenerate: self.degenerate,
        }
    }
}

/// Edge-weight model applied on top of a sampled structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeWeights {
    Unit,
    /// Magnitude uniform in `[low, high)`, sign a fair coin flip.
    SignedUniform { low: f64, high: f64 },
}

/// Re-draws every edge weight of `d` under `model`, keeping the structure.
pub fn assign_weights(d: &Dag, model: EdgeWeights, seed: u64) -> Result<Dag> {
    if let EdgeWeights::SignedUniform { low, high } = model {
        if !(0.0 < low && low < high && high.is_finite()) {
            return Err(Error::InvalidParams(format!("weight range [{low}, {high})")));
        }
    }
    let mut rng = rng_from_seed(seed);
    let edges = d
        .edges()
        .iter()
        .map(|e| {
            let w = match model {
                EdgeWeights::Unit => 1.0,
                EdgeWeights::SignedUniform { low, high } => {
                    let mag = rng.random_range(low..high);
                    if rng.random_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                }
            };
            Edge::new(e.target, e.source, w)
        })
        .collect();
    Dag::new(d.n(), edges)
}

/// Erdős–Rényi DAG: every unordered pair is joined with probability `p`,
/// oriented from earlier to later in a uniformly random node ordering.
pub fn er_dag(n: usize, p: f64, seed: u64) -> Result<Dag> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParams(format!("edge probability {p} not in [0, 1]")));
    }
    let mut rng = rng_from_seed(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push(Edge::unit(perm[b], perm[a]));
            }
        }
    }
    Dag::new(n, edges)
}

/// Scale-free DAG by preferential attachment. Starting from `m0` isolated
/// nodes, each new node links from `m` distinct existing nodes drawn with
/// probability proportional to `degree + 1`; edges point existing → new.
pub fn sf_dag(n: usize, m: usize, m0: usize, seed: u64) -> Result<Dag> {
    if m == 0 || m > m0 || m0 >= n {
        return Err(Error::InvalidParams(format!(
            "scale-free needs 1 <= m <= m0 < n, got m={m}, m0={m0}, n={n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut degree = vec![0usize; n];
    let mut edges = Vec::with_capacity(m * (n - m0));
    for new in m0..n {
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        for _ in 0..m {
            let total: usize = (0..new)
                .filter(|i| !chosen.contains(i))
                .map(|i| degree[i] + 1)
                .sum();
            let mut r = rng.random_range(0..total);
            let pick = (0..new)
                .filter(|i| !chosen.contains(i))
                .find(|&i| {
                    let w = degree[i] + 1;
                    if r < w {
                        true
                    } else {
                        r -= w;
                        false
                    }
                })
                .expect("weights cover the draw");
            chosen.push(pick);
        }
        for &src in &chosen {
            degree[src] += 1;
            degree[new] += 1;
            edges.push(Edge::unit(new, src));
        }
    }
    Dag::new(n, edges)
}

/// Filter on `n_anchors` uniformly sampled causal GSOs with taps drawn
/// i.i.d. from `U[-1, 1]`.
pub fn random_filter(d: &Dag, n_anchors: usize, seed: u64) -> Result<CausalFilter> {
    if n_anchors == 0 || n_anchors > d.n() {
        return Err(Error::InvalidParams(format!(
            "{n_anchors} anchors requested on {} nodes",
            d.n()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let anchors = AnchorSelection::sample(d.n(), n_anchors, &mut rng)?;
    let theta: Vec<f64> = (0..n_anchors).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let c = transitive_closure(d);
    build_filter(gso_set(d, &c, &anchors, false)?, theta)
}

/// `x + σ z` with `σ = sqrt(power · ‖x‖² / n)` and `z` standard normal.
pub fn add_noise<R: Rng + ?Sized>(x: &[f64], normalized_power: f64, rng: &mut R) -> Vec<f64> {
    if normalized_power <= 0.0 || x.is_empty() {
        return x.to_vec();
    }
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let sigma = (normalized_power * energy / x.len() as f64).sqrt();
    x.iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect()
}

fn column(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(x.len(), 1, x)
}

/// Network diffusion pairs `y = H x`: `x` is standard normal on the first
/// `support` nodes of the topological order and zero elsewhere; inputs and
/// outputs then receive independent noise at `noise_power`.
pub fn gen_diffusion_dataset(
    d: &Dag,
    filter: &CausalFilter,
    m: usize,
    support: usize,
    noise_power: f64,
    seed: u64,
) -> Result<TaskDataset> {
    let n = d.n();
    if support > n || filter.n() != n {
        return Err(Error::InvalidParams(format!(
            "support {support} / filter size {} on {n} nodes",
            filter.n()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let support_nodes = &d.order()[..support];
    let mut samples = Vec::with_capacity(m);
    for _ in 0..m {
        let mut x = vec![0.0; n];
        for &i in support_nodes {
            x[i] = rng.sample(StandardNormal);
        }
        let y = filter.convolve(&x)?;
        let x_obs = add_noise(&x, noise_power, &mut rng);
        let y_obs = add_noise(&y, noise_power, &mut rng);
        samples.push(Sample {
            input: column(&x_obs),
            target: Target::Signal {
                observed: y_obs,
                clean: y,
            },
        });
    }
    Ok(TaskDataset {
        dag: d.clone(),
        task: TaskKind::Diffusion,
        samples,
        input_mask: None,
        target_mask: None,
        candidates: Vec::new(),
        degenerate: false,
    })
}

/// Source identification: `x = e_s` for a uniformly chosen source `s` among
/// the first `candidate_count` nodes in topological order; the model sees
/// `H x` with every candidate entry zeroed and must name `s`.
pub fn gen_source_id_dataset(
    d: &Dag,
    filter: &CausalFilter,
    m: usize,
    candidate_count: usize,
    seed: u64,
) -> Result<TaskDataset> {
    let n = d.n();
    if candidate_count == 0 || candidate_count > n || filter.n() != n {
        return Err(Error::InvalidParams(format!(
            "{candidate_count} candidates on {n} nodes"
        )));
    }
    let candidates: Vec<usize> = d.order()[..candidate_count].to_vec();
    let mut observed = vec![true; n];
    for &c in &candidates {
        observed[c] = false;
    }
    let degenerate = candidate_count == n;
    if degenerate {
        warn!("source identification with every node a candidate: inputs are all zero");
    }
    let mut rng = rng_from_seed(seed);
    let mut samples = Vec::with_capacity(m);
    for _ in 0..m {
        let label = rng.random_range(0..candidate_count);
        let mut x = vec![0.0; n];
        x[candidates[label]] = 1.0;
        let mut y = filter.convolve(&x)?;
        for (v, &o) in y.iter_mut().zip(&observed) {
            if !o {
                *v = 0.0;
            }
        }
        samples.push(Sample {
            input: column(&y),
            target: Target::Label(label),
        });
    }
    Ok(TaskDataset {
        dag: d.clone(),
        task: TaskKind::SourceId,
        samples,
        input_mask: Some(observed),
        target_mask: None,
        candidates,
        degenerate,
    })
}

/// Masked-node interpolation: inputs are the signals with `masked_nodes`
/// zeroed plus an observation-indicator channel; targets are the original
/// signals, scored only at the masked nodes.
pub fn gen_imputation_split(
    d: &Dag,
    signals: &[Vec<f64>],
    masked_nodes: &[usize],
) -> Result<TaskDataset> {
    let n = d.n();
    if masked_nodes.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut target_mask = vec![false; n];
    for &i in masked_nodes {
        if i >= n {
            return Err(Error::NodeOutOfRange { index: i, n });
        }
        target_mask[i] = true;
    }
    if target_mask.iter().all(|&m| m) {
        return Err(Error::MaskCoversAll);
    }
    let observed: Vec<bool> = target_mask.iter().map(|m| !m).collect();
    let mut samples = Vec::with_capacity(signals.len());
    for s in signals {
        if s.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.len(),
            });
        }
        let input = DMatrix::from_fn(n, 2, |i, c| match (c, observed[i]) {
            (0, true) => s[i],
            (1, true) => 1.0,
            _ => 0.0,
        });
        samples.push(Sample {
            input,
            target: Target::Signal {
                observed: s.clone(),
                clean: s.clone(),
            },
        });
    }
    Ok(TaskDataset {
        dag: d.clone(),
        task: TaskKind::Imputation,
        samples,
        input_mask: Some(observed),
        target_mask: Some(target_mask),
        candidates: Vec::new(),
        degenerate: false,
    })
}

/// `count` distinct nodes drawn uniformly from positions `from..` of the
/// topological order, i.e. excluding the earliest nodes.
pub fn sample_masked_nodes(d: &Dag, count: usize, from: usize, seed: u64) -> Result<Vec<usize>> {
    let pool = d.order().get(from..).unwrap_or(&[]);
    if count == 0 || count > pool.len() {
        return Err(Error::InvalidParams(format!(
            "cannot mask {count} of {} eligible nodes",
            pool.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut picked: Vec<usize> = pool.choose_multiple(&mut rng, count).copied().collect();
    picked.sort_unstable();
    debug_assert_eq!(picked.iter().collect::<HashSet<_>>().len(), count);
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::ls_fit;

    #[test]
    fn reweighting_keeps_structure() {
        let d = er_dag(30, 0.3, 4).unwrap();
        let w = assign_weights(&d, EdgeWeights::SignedUniform { low: 0.2, high: 0.7 }, 9).unwrap();
        assert_eq!(d.edge_set(), w.edge_set());
        assert!(w.edges().iter().all(|e| (0.2..0.7).contains(&e.weight.abs())));
        assert!(w.edges().iter().any(|e| e.weight < 0.0));
        let u = assign_weights(&w, EdgeWeights::Unit, 0).unwrap();
        assert!(u.edges().iter().all(|e| e.weight == 1.0));
        assert!(assign_weights(&d, EdgeWeights::SignedUniform { low: 0.5, high: 0.1 }, 0).is_err());
    }

    #[test]
    fn er_extremes() {
        assert!(er_dag(10, 0.0, 1).unwrap().edges().is_empty());
        assert_eq!(er_dag(4, 1.0, 1).unwrap().edges().len(), 6);
        assert!(er_dag(4, 1.5, 1).is_err());
    }

    #[test]
    fn sf_edge_count_and_small_case() {
        let d = sf_dag(4, 3, 3, 9).unwrap();
        assert_eq!(d.edge_set(), [(3, 0), (3, 1), (3, 2)].into_iter().collect());
        for seed in 0..10 {
            assert_eq!(sf_dag(60, 3, 4, seed).unwrap().edges().len(), 3 * 56);
        }
        assert!(sf_dag(5, 3, 2, 0).is_err());
        assert!(sf_dag(5, 1, 5, 0).is_err());
    }

    #[test]
    fn filter_taps_in_range() {
        let d = er_dag(30, 0.2, 4).unwrap();
        let f = random_filter(&d, 30, 5).unwrap();
        assert_eq!(f.gsos().len(), 30);
        assert!(f.theta().iter().all(|t| (-1.0..=1.0).contains(t)));
        assert!(random_filter(&d, 31, 5).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = rng_from_seed(0);
        let x = vec![1.0, -2.0, 3.0];
        assert_eq!(add_noise(&x, 0.0, &mut rng), x);
        assert_eq!(add_noise(&[0.0; 4], 0.3, &mut rng), vec![0.0; 4]);
    }

    #[test]
    fn diffusion_noiseless_is_realizable() {
        let d = er_dag(20, 0.3, 2).unwrap();
        let f = random_filter(&d, 5, 3).unwrap();
        let ds = gen_diffusion_dataset(&d, &f, 40, 5, 0.0, 4).unwrap();
        let support: HashSet<_> = d.order()[..5].iter().copied().collect();
        let mut pairs = Vec::new();
        for s in &ds.samples {
            let x = s.input.as_slice().to_vec();
            for (i, v) in x.iter().enumerate() {
                if !support.contains(&i) {
                    assert_eq!(*v, 0.0);
                }
            }
            let Target::Signal { observed, clean } = &s.target else { panic!() };
            assert_eq!(observed, clean);
            assert_eq!(&f.convolve(&x).unwrap(), clean);
            pairs.push((x, clean.clone()));
        }
        let theta = ls_fit(f.gsos(), &pairs).unwrap();
        let fit = build_filter(f.gsos().clone(), theta).unwrap();
        for (x, y) in &pairs {
            let yh = fit.convolve(x).unwrap();
            let err: f64 = yh.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
            let norm: f64 = y.iter().map(|b| b * b).sum();
            assert!(err / norm < 1e-12);
        }
        assert!(gen_diffusion_dataset(&d, &f, 0, 5, 0.0, 4).unwrap().is_empty());
    }

    #[test]
    fn source_id_masks_candidates() {
        let d = er_dag(30, 0.2, 7).unwrap();
        let f = random_filter(&d, 10, 8).unwrap();
        let ds = gen_source_id_dataset(&d, &f, 50, 10, 9).unwrap();
        assert_eq!(ds.candidates, d.order()[..10].to_vec());
        let mask = ds.input_mask.as_ref().unwrap();
        let masked: Vec<_> = (0..30).filter(|&i| !mask[i]).collect();
        let mut cands = ds.candidates.clone();
        cands.sort();
        assert_eq!(masked, cands);
        for s in &ds.samples {
            for &c in &ds.candidates {
                assert_eq!(s.input[(c, 0)], 0.0);
            }
            assert!(matches!(s.target, Target::Label(l) if l < 10));
        }
    }

    #[test]
    fn source_id_full_mask_is_degenerate() {
        let d = Dag::new(3, vec![Edge::unit(1, 0), Edge::unit(2, 1)]).unwrap();
        let c = transitive_closure(&d);
        let g = gso_set(&d, &c, &AnchorSelection::Nodes(vec![2]), false).unwrap();
        let f = build_filter(g, vec![1.0]).unwrap();
        let ds = gen_source_id_dataset(&d, &f, 5, 3, 1).unwrap();
        assert!(ds.degenerate);
        assert!(ds.samples.iter().all(|s| s.input.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn imputation_masks_one_node() {
        let d = er_dag(20, 0.2, 1).unwrap();
        let signals: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..20).map(|i| (i * k) as f64 + 1.0).collect())
            .collect();
        let ds = gen_imputation_split(&d, &signals, &[7]).unwrap();
        let tm = ds.target_mask.as_ref().unwrap();
        assert_eq!(tm.iter().filter(|&&m| m).count(), 1);
        for (s, orig) in ds.samples.iter().zip(&signals) {
            assert_eq!(s.input[(7, 0)], 0.0);
            assert_eq!(s.input[(7, 1)], 0.0);
            // unmasking: observed entries plus targets at masked rows
            let Target::Signal { clean, .. } = &s.target else { panic!() };
            let restored: Vec<f64> = (0..20)
                .map(|i| if tm[i] { clean[i] } else { s.input[(i, 0)] })
                .collect();
            assert_eq!(&restored, orig);
        }
        let all: Vec<usize> = (0..20).collect();
        assert!(matches!(gen_imputation_split(&d, &signals, &all), Err(Error::MaskCoversAll)));
        assert!(matches!(gen_imputation_split(&d, &signals, &[]), Err(Error::EmptyMask)));
    }

    #[test]
    fn seeded_generators_are_deterministic() {
        assert_eq!(er_dag(40, 0.2, 11).unwrap(), er_dag(40, 0.2, 11).unwrap());
        assert_eq!(sf_dag(40, 2, 3, 11).unwrap(), sf_dag(40, 2, 3, 11).unwrap());
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }
}
