//! Anchor-function composition task and the modular-addition task.
//!
//! Token layout: keys are ids `0..K`, anchor `a_i` is id `K + i`. A sequence
//! `(k, a_i, a_j)` has target `π_j(π_i(k))`, itself a key id. For modular
//! addition the residues are ids `0..p` and `=` is id `p`.
//!
//! Tasks persist in a small line-oriented text format:
//!
//! ```text
//! critwin-task v1
//! K 16
//! M 8
//! train_pair_fraction 0.7
//! seed 7
//! permutations
//! <K space-separated ints>      (one row per anchor, M rows)
//! train_pairs 45
//! <i> <j>                       (one ordered pair per line, sorted)
//! ood_pairs 19
//! <i> <j>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

pub const TASK_FORMAT_HEADER: &str = "critwin-task v1";
const MAX_SPLIT_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub keys: usize,
    pub anchors: usize,
    pub train_pair_fraction: f64,
    pub seed: u64,
}

impl TaskSpec {
    /// The reference task: K = 16 keys, M = 8 anchors, 70% of pairs in train.
    pub fn reference(seed: u64) -> Self {
        TaskSpec {
            keys: 16,
            anchors: 8,
            train_pair_fraction: 0.7,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.keys < 2 {
            return Err(Error::InvalidConfig(format!("K = {} < 2", self.keys)));
        }
        if self.anchors < 2 {
            return Err(Error::InvalidConfig(format!("M = {} < 2", self.anchors)));
        }
        let f = self.train_pair_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_pair_fraction = {f} outside (0, 1]"
            )));
        }
        Ok(())
    }
}

/// `⌈fraction · n⌉`, tolerant of representation error in the product
/// (0.7·64 → 45, 0.1·30 → 3).
pub fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let c = (x - 1e-9).ceil().max(0.0) as usize;
    c.min(n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTask {
    pub spec: TaskSpec,
    /// `permutations[i][k] = π_i(k)`.
    pub permutations: Vec<Vec<usize>>,
    pub train_pairs: Vec<(usize, usize)>,
    pub ood_pairs: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    pub tokens: [usize; 3],
    pub target: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSet {
    Train,
    Ood,
}

/// Examples ready for training, plus the vocabulary they live in.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: usize,
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
}

pub fn generate_anchor_task(spec: &TaskSpec) -> Result<AnchorTask> {
    spec.validate()?;
    let (k, m) = (spec.keys, spec.anchors);

    let mut perm_rng = stream(spec.seed, Stream::Permutations);
    let permutations = (0..m)
        .map(|_| {
            let mut p: Vec<usize> = (0..k).collect();
            p.shuffle(&mut perm_rng);
            p
        })
        .collect();

    let n_train = ceil_fraction(spec.train_pair_fraction, m * m);
    if n_train < m {
        return Err(Error::CoverageUnsatisfiable(format!(
            "{n_train} train pairs cannot place each of the {m} anchors in both positions \
             (need at least {m}; raise train_pair_fraction)"
        )));
    }

    let mut pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let mut split_rng = stream(spec.seed, Stream::PairSplit);
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        pairs.shuffle(&mut split_rng);
        let (train, ood) = pairs.split_at(n_train);
        if covers_all_anchors(train, m) {
            let mut train = train.to_vec();
            let mut ood = ood.to_vec();
            train.sort_unstable();
            ood.sort_unstable();
            return Ok(AnchorTask {
                spec: spec.clone(),
                permutations,
                train_pairs: train,
                ood_pairs: ood,
            });
        }
    }
    Err(Error::CoverageUnsatisfiable(format!(
        "no split of {n_train}/{} pairs covered every anchor in both positions after \
         {MAX_SPLIT_ATTEMPTS} attempts",
        m * m
    )))
}

fn covers_all_anchors(pairs: &[(usize, usize)], m: usize) -> bool {
    let mut first = vec![false; m];
    let mut second = vec![false; m];
    for &(i, j) in pairs {
        first[i] = true;
        second[j] = true;
    }
    first.iter().all(|&b| b) && second.iter().all(|&b| b)
}

impl AnchorTask {
    pub fn vocab_size(&self) -> usize {
        self.spec.keys + self.spec.anchors
    }

    /// `π_j(π_i(k))`.
    pub fn compose(&self, k: usize, i: usize, j: usize) -> usize {
        self.permutations[j][self.permutations[i][k]]
    }

    pub fn pairs(&self, set: PairSet) -> &[(usize, usize)] {
        match set {
            PairSet::Train => &self.train_pairs,
            PairSet::Ood => &self.ood_pairs,
        }
    }

    pub fn materialize(&self, set: PairSet) -> Result<Vec<Example>> {
        let pairs = self.pairs(set);
        if pairs.is_empty() {
            return Err(Error::Empty("pair set"));
        }
        let k_count = self.spec.keys;
        Ok(pairs
            .iter()
            .flat_map(|&(i, j)| {
                (0..k_count).map(move |k| Example {
                    tokens: [k, k_count + i, k_count + j],
                    target: self.compose(k, i, j),
                })
            })
            .collect())
    }

    /// Train split plus OOD split (empty when every pair is in train).
    pub fn dataset(&self) -> Result<Dataset> {
        let train = self.materialize(PairSet::Train)?;
        let eval = if self.ood_pairs.is_empty() {
            Vec::new()
        } else {
            self.materialize(PairSet::Ood)?
        };
        Ok(Dataset {
            vocab: self.vocab_size(),
            train,
            eval,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{TASK_FORMAT_HEADER}");
        let _ = writeln!(s, "K {}", self.spec.keys);
        let _ = writeln!(s, "M {}", self.spec.anchors);
        let _ = writeln!(s, "train_pair_fraction {}", self.spec.train_pair_fraction);
        let _ = writeln!(s, "seed {}", self.spec.seed);
        let _ = writeln!(s, "permutations");
        for p in &self.permutations {
            let row: Vec<String> = p.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        for (name, pairs) in [("train_pairs", &self.train_pairs), ("ood_pairs", &self.ood_pairs)] {
            let _ = writeln!(s, "{name} {}", pairs.len());
            for (i, j) in pairs.iter() {
                let _ = writeln!(s, "{i} {j}");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<AnchorTask> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().unwrap_or_default();
        if header != TASK_FORMAT_HEADER {
            return Err(Error::Parse(format!("bad task header `{header}`")));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{name}`")))?;
            let rest = line
                .strip_prefix(name)
                .ok_or_else(|| Error::Parse(format!("expected `{name}`, got `{line}`")))?;
            Ok(rest.trim().to_string())
        };
        let keys: usize = parse(&field("K")?)?;
        let anchors: usize = parse(&field("M")?)?;
        let train_pair_fraction: f64 = parse(&field("train_pair_fraction")?)?;
        let seed: u64 = parse(&field("seed")?)?;
        field("permutations")?;
        let mut permutations = Vec::with_capacity(anchors);
        for _ in 0..anchors {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("truncated permutations".into()))?;
            let row = line
                .split_whitespace()
                .map(parse::<usize>)
                .collect::<Result<Vec<_>>>()?;
            permutations.push(row);
        }
        let mut read_pairs = |name: &str| -> Result<Vec<(usize, usize)>> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{name}`")))?;
            let n: usize = parse(
                line.strip_prefix(name)
                    .ok_or_else(|| Error::Parse(format!("expected `{name}`, got `{line}`")))?
                    .trim(),
            )?;
            (0..n)
                .map(|_| {
                    let l = lines
                        .next()
                        .ok_or_else(|| Error::Parse(format!("truncated `{name}`")))?;
                    let mut it = l.split_whitespace().map(parse::<usize>);
                    match (it.next(), it.next()) {
                        (Some(i), Some(j)) => Ok((i?, j?)),
                        _ => Err(Error::Parse(format!("bad pair line `{l}`"))),
                    }
                })
                .collect()
        };
        let train_pairs = read_pairs("train_pairs")?;
        let ood_pairs = read_pairs("ood_pairs")?;
        let task = AnchorTask {
            spec: TaskSpec {
                keys,
                anchors,
                train_pair_fraction,
                seed,
            },
            permutations,
            train_pairs,
            ood_pairs,
        };
        task.check()?;
        Ok(task)
    }

    /// Structural invariants: bijections, disjoint and complete split, coverage.
    pub fn check(&self) -> Result<()> {
        self.spec.validate()?;
        let (k, m) = (self.spec.keys, self.spec.anchors);
        if self.permutations.len() != m {
            return Err(Error::Parse(format!(
                "{} permutations for M = {m}",
                self.permutations.len()
            )));
        }
        for (i, p) in self.permutations.iter().enumerate() {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            if sorted != (0..k).collect::<Vec<_>>() {
                return Err(Error::Parse(format!("permutation {i} is not a bijection on 0..{k}")));
            }
        }
        let mut seen = vec![0u8; m * m];
        for &(i, j) in self.train_pairs.iter().chain(&self.ood_pairs) {
            if i >= m || j >= m {
                return Err(Error::Parse(format!("pair ({i}, {j}) out of range")));
            }
            seen[i * m + j] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(Error::Parse("train/ood pairs must partition all M² pairs".into()));
        }
        if !covers_all_anchors(&self.train_pairs, m) {
            return Err(Error::CoverageUnsatisfiable(
                "train pairs do not cover every anchor in both positions".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AnchorTask> {
        AnchorTask::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("cannot parse `{s}`")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModularTaskSpec {
    pub modulus: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl ModularTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modulus < 3 {
            return Err(Error::InvalidConfig(format!("p = {} < 3", self.modulus)));
        }
        let f = self.train_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidConfig(format!("train_fraction = {f} outside (0, 1]")));
        }
        Ok(())
    }
}

/// `(a, b, =) ↦ (a + b) mod p` over all p² equations.
pub fn generate_modular_task(spec: &ModularTaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let p = spec.modulus;
    let mut all: Vec<Example> = (0..p)
        .flat_map(|a| {
            (0..p).map(move |b| Example {
                tokens: [a, b, p],
                target: (a + b) % p,
            })
        })
        .collect();
    let n_train = ceil_fraction(spec.train_fraction, p * p);
    let mut rng = stream(spec.seed, Stream::ModularSplit);
    all.shuffle(&mut rng);
    let mut eval = all.split_off(n_train);
    let mut train = all;
    train.sort_unstable_by_key(|e| e.tokens);
    eval.sort_unstable_by_key(|e| e.tokens);
    Ok(Dataset {
        vocab: p + 1,
        train,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_split_sizes() {
        let task = generate_anchor_task(&TaskSpec::reference(0)).unwrap();
        assert_eq!(task.train_pairs.len(), 45);
        assert_eq!(task.ood_pairs.len(), 19);
        let ds = task.dataset().unwrap();
        assert_eq!(ds.train.len(), 720);
        assert_eq!(ds.eval.len(), 304);
        assert_eq!(ds.vocab, 24);
    }

    #[test]
    fn full_split_has_no_ood() {
        let spec = TaskSpec {
            keys: 5,
            anchors: 2,
            train_pair_fraction: 1.0,
            seed: 3,
        };
        let task = generate_anchor_task(&spec).unwrap();
        assert!(task.ood_pairs.is_empty());
        assert_eq!(task.train_pairs, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!(matches!(task.materialize(PairSet::Ood), Err(Error::Empty(_))));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_anchor_task(&TaskSpec::reference(11)).unwrap();
        let b = generate_anchor_task(&TaskSpec::reference(11)).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = generate_anchor_task(&TaskSpec::reference(12)).unwrap();
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn coverage_failure_is_explicit() {
        let spec = TaskSpec {
            keys: 4,
            anchors: 8,
            train_pair_fraction: 0.1,
            seed: 0,
        };
        let err = generate_anchor_task(&spec).unwrap_err();
        assert!(matches!(err, Error::CoverageUnsatisfiable(_)));
        assert!(err.to_string().contains("train_pair_fraction"));
    }

    #[test]
    fn invalid_specs_rejected() {
        for (k, m, f) in [(1, 4, 0.5), (4, 1, 0.5), (4, 4, 0.0), (4, 4, 1.5)] {
            let spec = TaskSpec {
                keys: k,
                anchors: m,
                train_pair_fraction: f,
                seed: 0,
            };
            assert!(generate_anchor_task(&spec).is_err());
        }
    }

    fn task_with(perms: Vec<Vec<usize>>) -> AnchorTask {
        let m = perms.len();
        let k = perms[0].len();
        AnchorTask {
            spec: TaskSpec {
                keys: k,
                anchors: m,
                train_pair_fraction: 1.0,
                seed: 0,
            },
            permutations: perms,
            train_pairs: (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).collect(),
            ood_pairs: vec![],
        }
    }

    #[test]
    fn identity_permutations_return_key() {
        let task = task_with(vec![(0..6).collect(), (0..6).collect()]);
        for ex in task.materialize(PairSet::Train).unwrap() {
            assert_eq!(ex.target, ex.tokens[0]);
        }
    }

    #[test]
    fn one_sided_composition() {
        // π_0 = (0 1)(2 3), π_1 = identity; pair (0, 1) gives π_0(k).
        let task = task_with(vec![vec![1, 0, 3, 2], vec![0, 1, 2, 3]]);
        let ex = task.materialize(PairSet::Train).unwrap();
        let pair01: Vec<_> = ex.iter().filter(|e| e.tokens[1] == 4 && e.tokens[2] == 5).collect();
        let targets: Vec<usize> = pair01.iter().map(|e| e.target).collect();
        assert_eq!(targets, vec![1, 0, 3, 2]);
    }

    #[test]
    fn text_round_trip() {
        let task = generate_anchor_task(&TaskSpec::reference(5)).unwrap();
        let back = AnchorTask::from_text(&task.to_text()).unwrap();
        assert_eq!(task, back);
    }

    #[test]
    fn corrupted_file_rejected() {
        let task = generate_anchor_task(&TaskSpec::reference(5)).unwrap();
        let text = task.to_text().replacen("critwin-task v1", "critwin-task v9", 1);
        assert!(AnchorTask::from_text(&text).is_err());
        let mut bad = task.clone();
        bad.permutations[0][0] = bad.permutations[0][1];
        assert!(AnchorTask::from_text(&bad.to_text()).is_err());
    }

    #[test]
    fn modular_split_sizes() {
        let ds = generate_modular_task(&ModularTaskSpec {
            modulus: 67,
            train_fraction: 0.4,
            seed: 1,
        })
        .unwrap();
        assert_eq!(ds.train.len(), 1796);
        assert_eq!(ds.train.len() + ds.eval.len(), 67 * 67);
        assert_eq!(ds.vocab, 68);

        let full = generate_modular_task(&ModularTaskSpec {
            modulus: 5,
            train_fraction: 1.0,
            seed: 1,
        })
        .unwrap();
        assert_eq!(full.train.len(), 25);
        assert!(full.eval.is_empty());
        let e = full.train.iter().find(|e| e.tokens[..2] == [2, 3]).unwrap();
        assert_eq!(e.target, 0);
        assert_eq!(e.tokens[2], 5);
    }
}
