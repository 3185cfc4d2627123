//! Modular arithmetic over Z/p, the six binary tasks, discrete-log tables,
//! Gaussian-integer units, grouping bases for Fourier analysis, and dataset
//! generation. Everything is exact integer arithmetic on small primes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GroupError {
    #[error("{0} is not prime")]
    NotPrime(u32),
    #[error("no square root of -1 mod {0} (p = 3 mod 4)")]
    NoSqrtMinusOne(u32),
    #[error("pair ({0},{1}) is outside the basis domain mask")]
    MaskedPair(u32, u32),
    #[error("dlog of 0 is undefined")]
    DlogOfZero,
}

/// One of the six binary operations over Z/p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    X2y2,
    X2xyY2,
    X3xy,
}

impl OpKind {
    pub const ALL: [OpKind; 6] =
        [OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::X2y2, OpKind::X2xyY2, OpKind::X3xy];

    /// Whether this operation is expected to grok under weight decay.
    pub fn groks(self) -> bool {
        !matches!(self, OpKind::X2xyY2 | OpKind::X3xy)
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::X2y2 => "x2y2",
            OpKind::X2xyY2 => "x2xy_y2",
            OpKind::X3xy => "x3xy",
        }
    }

    pub fn parse(s: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|op| op.name() == s)
    }
}

/// A task: a binary operation mod a prime, plus its expected grokking flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub op_kind: OpKind,
    pub modulus: u32,
    pub groks: bool,
}

impl TaskSpec {
    pub fn new(op_kind: OpKind, modulus: u32) -> Result<TaskSpec, GroupError> {
        if !is_prime(modulus) {
            return Err(GroupError::NotPrime(modulus));
        }
        Ok(TaskSpec { op_kind, modulus, groks: op_kind.groks() })
    }
}

pub fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u32;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

pub fn mod_pow(base: u64, mut exp: u64, modulus: u64) -> u64 {
    let mut result = 1u64;
    let mut b = base % modulus;
    while exp > 0 {
        if exp & 1 == 1 {
            result = result * b % modulus;
        }
        b = b * b % modulus;
        exp >>= 1;
    }
    result
}

/// Apply the task's operation; total on 0 <= a,b < p.
pub fn eval_task(task: &TaskSpec, a: u32, b: u32) -> u32 {
    let p = task.modulus as u64;
    let (a, b) = (a as u64 % p, b as u64 % p);
    let r = match task.op_kind {
        OpKind::Add => (a + b) % p,
        OpKind::Sub => (a + p - b) % p,
        OpKind::Mul => a * b % p,
        OpKind::X2y2 => (a * a % p + b * b % p) % p,
        OpKind::X2xyY2 => (a * a % p + a * b % p + b * b % p) % p,
        OpKind::X3xy => (a * a % p * a % p + a * b % p) % p,
    };
    r as u32
}

/// Smallest positive primitive root of (Z/pZ)*, by exhaustive order check.
pub fn primitive_root(p: u32) -> Result<u32, GroupError> {
    if !is_prime(p) {
        return Err(GroupError::NotPrime(p));
    }
    if p == 2 {
        return Ok(1); // the group is trivial
    }
    let order = (p - 1) as u64;
    // Prime factors of p-1, trial division.
    let mut factors = Vec::new();
    let mut m = order;
    let mut d = 2u64;
    while d * d <= m {
        if m % d == 0 {
            factors.push(d);
            while m % d == 0 {
                m /= d;
            }
        }
        d += 1;
    }
    if m > 1 {
        factors.push(m);
    }
    'cand: for g in 2..p {
        for &f in &factors {
            if mod_pow(g as u64, order / f, p as u64) == 1 {
                continue 'cand;
            }
        }
        return Ok(g);
    }
    unreachable!("every prime has a primitive root")
}

/// The smaller square root of -1 mod p; requires p = 1 (mod 4).
pub fn sqrt_minus_one(p: u32) -> Result<u32, GroupError> {
    if !is_prime(p) {
        return Err(GroupError::NotPrime(p));
    }
    if p % 4 != 1 {
        return Err(GroupError::NoSqrtMinusOne(p));
    }
    let p64 = p as u64;
    for i in 1..p64 {
        if i * i % p64 == p64 - 1 {
            return Ok(i as u32); // ascending scan returns the smaller root
        }
    }
    unreachable!("p = 1 mod 4 always admits a root of -1")
}

/// Discrete-log table for (Z/pZ)*: `g^table[x] = x (mod p)` for x in 1..p.
#[derive(Debug, Clone)]
pub struct DlogTable {
    pub p: u32,
    pub g: u32,
    /// Indexed by x - 1 for x in 1..p.
    table: Vec<u32>,
}

impl DlogTable {
    pub fn new(p: u32) -> Result<DlogTable, GroupError> {
        let g = primitive_root(p)?;
        let mut table = vec![0u32; (p - 1) as usize];
        let mut x = 1u64;
        for e in 0..(p - 1) {
            table[(x - 1) as usize] = e;
            x = x * g as u64 % p as u64;
        }
        Ok(DlogTable { p, g, table })
    }

    /// dlog_g(x) for x in 1..p; errors on x = 0 mod p.
    pub fn dlog(&self, x: u32) -> Result<u32, GroupError> {
        let r = x % self.p;
        if r == 0 {
            return Err(GroupError::DlogOfZero);
        }
        Ok(self.table[(r - 1) as usize])
    }
}

/// The grouping variable used for group-averaged Fourier analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// q = (a + b) mod p, period p.
    AdditiveSum,
    /// q = (a - b) mod p, period p.
    AdditiveDiff,
    /// q = op(a, b) mod p, period p.
    OutputAdditive,
    /// q = (dlog a + dlog b) mod (p-1); with the Gaussian flag, over
    /// u = a + i_p b and v = a - i_p b instead. Period p-1.
    DlogSum,
    /// q = (dlog u - dlog v) mod (p-1), the phase of the Gaussian integer
    /// a + i_p b. Always over u, v. Period p-1.
    DlogDiff,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::AdditiveSum => "additive_sum",
            BasisKind::AdditiveDiff => "additive_diff",
            BasisKind::OutputAdditive => "output_additive",
            BasisKind::DlogSum => "dlog_sum",
            BasisKind::DlogDiff => "dlog_diff",
        }
    }
}

/// A concrete grouping basis for a given prime: kind, period, and the domain
/// mask excluding pairs whose dlog arguments vanish.
#[derive(Debug, Clone)]
pub struct GroupingBasis {
    pub kind: BasisKind,
    pub gaussian: bool,
    pub p: u32,
    /// Period M: p for additive kinds, p-1 for dlog kinds.
    pub period: u32,
    /// Only set for OutputAdditive.
    pub task: Option<TaskSpec>,
    /// i_p, needed by the Gaussian kinds.
    pub sqrt_minus_one: Option<u32>,
}

impl GroupingBasis {
    pub fn additive_sum(p: u32) -> GroupingBasis {
        GroupingBasis {
            kind: BasisKind::AdditiveSum,
            gaussian: false,
            p,
            period: p,
            task: None,
            sqrt_minus_one: None,
        }
    }

    pub fn additive_diff(p: u32) -> GroupingBasis {
        GroupingBasis {
            kind: BasisKind::AdditiveDiff,
            gaussian: false,
            p,
            period: p,
            task: None,
            sqrt_minus_one: None,
        }
    }

    pub fn output_additive(task: TaskSpec) -> GroupingBasis {
        GroupingBasis {
            kind: BasisKind::OutputAdditive,
            gaussian: false,
            p: task.modulus,
            period: task.modulus,
            task: Some(task),
            sqrt_minus_one: None,
        }
    }

    /// Sum of input dlogs: the multiplicative-character basis.
    pub fn dlog_sum_inputs(p: u32) -> GroupingBasis {
        GroupingBasis {
            kind: BasisKind::DlogSum,
            gaussian: false,
            p,
            period: p - 1,
            task: None,
            sqrt_minus_one: None,
        }
    }

    /// Sum of dlogs of the Gaussian-integer factors u = a + i_p b, v = a - i_p b.
    pub fn dlog_sum_gaussian(p: u32) -> Result<GroupingBasis, GroupError> {
        Ok(GroupingBasis {
            kind: BasisKind::DlogSum,
            gaussian: true,
            p,
            period: p - 1,
            task: None,
            sqrt_minus_one: Some(sqrt_minus_one(p)?),
        })
    }

    /// Difference of Gaussian-factor dlogs: the angular coordinate.
    pub fn dlog_diff_gaussian(p: u32) -> Result<GroupingBasis, GroupError> {
        Ok(GroupingBasis {
            kind: BasisKind::DlogDiff,
            gaussian: true,
            p,
            period: p - 1,
            task: None,
            sqrt_minus_one: Some(sqrt_minus_one(p)?),
        })
    }

    pub fn label(&self) -> String {
        if self.gaussian {
            format!("{}_gaussian", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }

    /// The Gaussian factors (u, v) of (a, b).
    fn gaussian_factors(&self, a: u32, b: u32) -> (u32, u32) {
        let p = self.p as u64;
        let i = self.sqrt_minus_one.expect("gaussian basis carries i_p") as u64;
        let u = (a as u64 + i * b as u64) % p;
        let v = (a as u64 + (p - i) * b as u64 % p) % p;
        (u as u32, v as u32)
    }

    /// Whether the pair is inside the domain mask.
    pub fn admits(&self, a: u32, b: u32) -> bool {
        match (self.kind, self.gaussian) {
            (BasisKind::AdditiveSum | BasisKind::AdditiveDiff | BasisKind::OutputAdditive, _) => {
                true
            }
            (BasisKind::DlogSum, false) => a % self.p != 0 && b % self.p != 0,
            (BasisKind::DlogSum | BasisKind::DlogDiff, true) => {
                let (u, v) = self.gaussian_factors(a, b);
                u != 0 && v != 0
            }
            (BasisKind::DlogDiff, false) => {
                let (u, v) = self.gaussian_factors(a, b);
                u != 0 && v != 0
            }
        }
    }

    /// Group index q(a, b) in 0..period.
    pub fn grouping_value(&self, dlog: &DlogTable, a: u32, b: u32) -> Result<u32, GroupError> {
        if !self.admits(a, b) {
            return Err(GroupError::MaskedPair(a, b));
        }
        let p = self.p;
        let m = self.period;
        let q = match (self.kind, self.gaussian) {
            (BasisKind::AdditiveSum, _) => (a + b) % p,
            (BasisKind::AdditiveDiff, _) => (a + p - b % p) % p,
            (BasisKind::OutputAdditive, _) => {
                let task = self.task.expect("output basis carries its task");
                eval_task(&task, a, b)
            }
            (BasisKind::DlogSum, false) => (dlog.dlog(a)? + dlog.dlog(b)?) % m,
            (BasisKind::DlogSum, true) => {
                let (u, v) = self.gaussian_factors(a, b);
                (dlog.dlog(u)? + dlog.dlog(v)?) % m
            }
            (BasisKind::DlogDiff, _) => {
                let (u, v) = self.gaussian_factors(a, b);
                (dlog.dlog(u)? + m - dlog.dlog(v)?) % m
            }
        };
        Ok(q)
    }
}

/// Labeled pairs with a seed-deterministic 50/50 train-test split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub task: TaskSpec,
    pub seed: u64,
    /// (a, b, label) triples; train split first.
    pub pairs: Vec<(u32, u32, u32)>,
    /// Number of leading pairs that form the train split: ceil(p^2 / 2).
    pub n_train: usize,
}

impl Dataset {
    pub fn train(&self) -> &[(u32, u32, u32)] {
        &self.pairs[..self.n_train]
    }

    pub fn test(&self) -> &[(u32, u32, u32)] {
        &self.pairs[self.n_train..]
    }
}

/// All p^2 labeled pairs, shuffled by a ChaCha stream keyed on the seed.
/// The split depends only on (p, seed), so tasks sharing a modulus and seed
/// share the same input partition.
pub fn make_dataset(task: &TaskSpec, seed: u64) -> Dataset {
    let p = task.modulus;
    let mut pairs: Vec<(u32, u32, u32)> = Vec::with_capacity((p * p) as usize);
    for a in 0..p {
        for b in 0..p {
            pairs.push((a, b, eval_task(task, a, b)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let n_train = (pairs.len() + 1) / 2;
    Dataset { task: *task, seed, pairs, n_train }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(op: OpKind, p: u32) -> TaskSpec {
        TaskSpec::new(op, p).unwrap()
    }

    #[test]
    fn eval_task_examples() {
        assert_eq!(eval_task(&task(OpKind::Add, 97), 50, 60), 13);
        assert_eq!(eval_task(&task(OpKind::X2y2, 97), 0, 0), 0);
        assert_eq!(eval_task(&task(OpKind::Mul, 97), 22, 22), 96); // 22^2 = -1 mod 97
        assert_eq!(eval_task(&task(OpKind::Sub, 97), 3, 5), 95);
        assert_eq!(eval_task(&task(OpKind::X3xy, 5), 2, 3), (8 + 6) % 5);
        assert_eq!(eval_task(&task(OpKind::X2xyY2, 5), 2, 3), (4 + 6 + 9) % 5);
    }

    #[test]
    fn groks_flag_follows_op() {
        assert!(task(OpKind::Add, 97).groks);
        assert!(task(OpKind::X2y2, 97).groks);
        assert!(!task(OpKind::X2xyY2, 97).groks);
        assert!(!task(OpKind::X3xy, 97).groks);
    }

    #[test]
    fn primitive_root_small_primes() {
        assert_eq!(primitive_root(97).unwrap(), 5);
        assert_eq!(primitive_root(2).unwrap(), 1);
        // Oracle: brute-force order check over all candidates.
        let p = 23u32;
        let mut smallest = None;
        'outer: for g in 1..p {
            let mut seen = vec![false; p as usize];
            let mut x = 1u64;
            for _ in 0..(p - 1) {
                if seen[x as usize] {
                    continue 'outer;
                }
                seen[x as usize] = true;
                x = x * g as u64 % p as u64;
            }
            smallest = Some(g);
            break;
        }
        assert_eq!(primitive_root(23).unwrap(), smallest.unwrap());
        assert_eq!(primitive_root(23).unwrap(), 5);
        assert!(primitive_root(15).is_err());
    }

    #[test]
    fn sqrt_minus_one_examples() {
        assert_eq!(sqrt_minus_one(97).unwrap(), 22);
        assert_eq!(sqrt_minus_one(5).unwrap(), 2);
        assert_eq!(sqrt_minus_one(13).unwrap(), 5); // 25 = -1 mod 13
        assert_eq!(sqrt_minus_one(7), Err(GroupError::NoSqrtMinusOne(7)));
    }

    #[test]
    fn dlog_round_trip() {
        for p in [5u32, 13, 23, 97] {
            let t = DlogTable::new(p).unwrap();
            let mut seen = vec![false; (p - 1) as usize];
            for x in 1..p {
                let e = t.dlog(x).unwrap();
                assert_eq!(mod_pow(t.g as u64, e as u64, p as u64), x as u64);
                assert!(!seen[e as usize], "dlog not a bijection at {x}");
                seen[e as usize] = true;
            }
        }
        assert_eq!(DlogTable::new(97).unwrap().dlog(0), Err(GroupError::DlogOfZero));
    }

    #[test]
    fn grouping_value_examples() {
        let p = 97;
        let dlog = DlogTable::new(p).unwrap();
        let add = GroupingBasis::additive_sum(p);
        assert_eq!(add.grouping_value(&dlog, 3, 5).unwrap(), 8);

        let mul = GroupingBasis::dlog_sum_inputs(p);
        assert_eq!(mul.grouping_value(&dlog, 5, 1).unwrap(), 1); // dlog(5)=1, dlog(1)=0
        assert!(mul.grouping_value(&dlog, 0, 5).is_err());

        let ang = GroupingBasis::dlog_diff_gaussian(p).unwrap();
        // b = 0 makes u = v = a, so the angle is 0.
        assert_eq!(ang.grouping_value(&dlog, 7, 0).unwrap(), 0);
    }

    #[test]
    fn gaussian_identity_all_masked_pairs() {
        // u*v = a^2 + b^2 (mod p) wherever the mask admits the pair.
        let p = 97u32;
        let basis = GroupingBasis::dlog_sum_gaussian(p).unwrap();
        assert_eq!(basis.sqrt_minus_one, Some(22));
        for a in 0..p {
            for b in 0..p {
                let (u, v) = basis.gaussian_factors(a, b);
                let lhs = u as u64 * v as u64 % p as u64;
                let rhs = (a as u64 * a as u64 + b as u64 * b as u64) % p as u64;
                assert_eq!(lhs, rhs, "({a},{b})");
            }
        }
    }

    #[test]
    fn additive_kinds_partition_into_p_classes() {
        let p = 13;
        let dlog = DlogTable::new(p).unwrap();
        for basis in [GroupingBasis::additive_sum(p), GroupingBasis::additive_diff(p)] {
            let mut counts = vec![0usize; p as usize];
            for a in 0..p {
                for b in 0..p {
                    let q = basis.grouping_value(&dlog, a, b).unwrap();
                    assert!(q < basis.period);
                    counts[q as usize] += 1;
                }
            }
            assert!(counts.iter().all(|&c| c == p as usize));
        }
    }

    #[test]
    fn dataset_split_sizes_and_determinism() {
        let t = task(OpKind::Add, 97);
        let d1 = make_dataset(&t, 42);
        assert_eq!(d1.train().len(), 4705);
        assert_eq!(d1.test().len(), 4704);
        let d2 = make_dataset(&t, 42);
        assert_eq!(d1.pairs, d2.pairs);
        let d3 = make_dataset(&t, 43);
        assert_ne!(d1.pairs, d3.pairs);
    }

    #[test]
    fn dataset_is_partition_with_correct_labels() {
        let t = task(OpKind::Add, 5);
        let d = make_dataset(&t, 42);
        assert_eq!(d.pairs.len(), 25);
        let mut seen = std::collections::HashSet::new();
        for &(a, b, c) in &d.pairs {
            assert_eq!(c, (a + b) % 5); // brute-force relabeling check
            assert!(seen.insert((a, b)));
        }
        assert_eq!(seen.len(), 25);
    }
}
