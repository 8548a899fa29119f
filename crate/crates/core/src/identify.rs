//! Influential-feature identification: extremise the surrogate over masks of
//! a fixed size.
//!
//! In the Möbius basis `f̂(S) = Σ_{R⊆S} I(R)`, so choosing `S` activates
//! exactly the monomials contained in it. Two exact solvers are provided:
//! exhaustive enumeration over the relevant features, and a depth-first
//! branch-and-bound whose bound adds every favourable coefficient that can
//! still be activated with the remaining cardinality.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::{index_list, Mask};
use crate::spectrum::{FourierSpectrum, MobiusSpectrum};

/// Exhaustive search handles at most this many relevant features.
pub const MAX_BRUTE_VARS: usize = 24;
pub const DEFAULT_MAX_NODES: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Brute,
    Bnb,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Direction::Max),
            "min" => Ok(Direction::Min),
            other => Err(Error::invalid(format!("unknown direction {other:?}"))),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" => Ok(Method::Brute),
            "bnb" => Ok(Method::Bnb),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimality {
    Proven,
    Heuristic,
}

impl fmt::Display for Optimality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimality::Proven => "proven",
            Optimality::Heuristic => "heuristic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_nodes: u64,
    pub time_limit: Option<Duration>,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_nodes: DEFAULT_MAX_NODES,
            time_limit: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IdentProgram {
    pub mobius: MobiusSpectrum,
    pub direction: Direction,
    /// Number of features retained, `n − r`.
    pub keep: usize,
    /// Features in some nonzero monomial, by decreasing `Σ |I(R)|` over the
    /// monomials containing them, ties to the lower index.
    pub relevant_vars: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentSolution {
    #[serde(serialize_with = "index_list::serialize")]
    pub mask: Mask,
    pub objective: f64,
    pub optimality: Optimality,
    pub nodes_explored: u64,
}

impl IdentProgram {
    /// Program over a Möbius polynomial; `remove` features are dropped.
    pub fn new(mobius: MobiusSpectrum, remove: usize, direction: Direction) -> Result<Self> {
        let n = mobius.n();
        if remove > n {
            return Err(Error::invalid(format!("cannot remove {remove} of {n} features")));
        }
        let mut weight = vec![0.0; n];
        for (r, c) in mobius.iter() {
            for i in r.iter() {
                weight[i] += c.abs();
            }
        }
        let mut relevant_vars: Vec<usize> = (0..n).filter(|&i| weight[i] > 0.0).collect();
        relevant_vars.sort_by(|&a, &b| weight[b].total_cmp(&weight[a]).then(a.cmp(&b)));
        Ok(IdentProgram {
            mobius,
            direction,
            keep: n - remove,
            relevant_vars,
        })
    }

    pub fn n(&self) -> usize {
        self.mobius.n()
    }

    /// The Möbius polynomial at `mask`.
    pub fn evaluate(&self, mask: &Mask) -> Result<f64> {
        self.mobius.evaluate(mask)
    }

    /// Bounds on how many relevant features a feasible mask contains.
    fn relevant_range(&self) -> (usize, usize) {
        let m = self.relevant_vars.len();
        let irrelevant = self.n() - m;
        (self.keep.saturating_sub(irrelevant), self.keep.min(m))
    }

    /// Completes a choice of relevant features with the lowest-index
    /// irrelevant ones.
    fn complete(&self, chosen: impl IntoIterator<Item = usize>) -> Mask {
        let n = self.n();
        let mut mask = Mask::empty(n);
        for i in chosen {
            mask.insert(i);
        }
        let mut relevant = Mask::empty(n);
        for &i in &self.relevant_vars {
            relevant.insert(i);
        }
        let mut i = 0;
        while mask.len() < self.keep {
            if !relevant.contains(i) && !mask.contains(i) {
                mask.insert(i);
            }
            i += 1;
        }
        mask
    }

    /// Monomials as position lists into `relevant_vars`, sign-adjusted so
    /// that the search always maximises. Returns the constant term too.
    fn signed_terms(&self) -> (f64, Vec<(Vec<usize>, f64)>) {
        let sign = match self.direction {
            Direction::Max => 1.0,
            Direction::Min => -1.0,
        };
        let mut pos = vec![usize::MAX; self.n()];
        for (p, &i) in self.relevant_vars.iter().enumerate() {
            pos[i] = p;
        }
        let mut constant = 0.0;
        let mut terms = Vec::new();
        for (r, c) in self.mobius.iter() {
            if r.is_empty() {
                constant += sign * c;
            } else {
                let mut p: Vec<usize> = r.iter().map(|i| pos[i]).collect();
                p.sort_unstable();
                terms.push((p, sign * c));
            }
        }
        (constant, terms)
    }
}

/// Converts `spec` to the Möbius basis and sets up the program.
pub fn build_program(spec: &FourierSpectrum, remove: usize, direction: Direction) -> Result<IdentProgram> {
    IdentProgram::new(spec.to_mobius()?, remove, direction)
}

pub fn solve(program: &IdentProgram, method: Method, limits: &Limits) -> Result<IdentSolution> {
    match method {
        Method::Brute => solve_brute(program),
        Method::Bnb => Ok(solve_bnb(program, limits)),
    }
}

fn solve_brute(p: &IdentProgram) -> Result<IdentSolution> {
    let m = p.relevant_vars.len();
    if m > MAX_BRUTE_VARS {
        return Err(Error::capacity(format!(
            "{m} relevant features; exhaustive search is limited to {MAX_BRUTE_VARS}"
        )));
    }
    let (_, terms) = p.signed_terms();
    // Zeta transform: g[c] = Σ of monomials inside position set c.
    let mut g = vec![0.0; 1usize << m];
    for (pos, c) in &terms {
        g[pos.iter().fold(0usize, |acc, &q| acc | 1 << q)] += c;
    }
    for bit in 0..m {
        let b = 1usize << bit;
        for code in 0..g.len() {
            if code & b != 0 {
                g[code] += g[code ^ b];
            }
        }
    }
    let (lo, hi) = p.relevant_range();
    let to_mask = |code: usize| p.complete((0..m).filter(|q| code & (1 << q) != 0).map(|q| p.relevant_vars[q]));
    let mut best: Option<(f64, usize, Mask)> = None;
    let mut nodes = 0u64;
    for (code, &v) in g.iter().enumerate() {
        let size = code.count_ones() as usize;
        if size < lo || size > hi {
            continue;
        }
        nodes += 1;
        match &best {
            Some((bv, _, _)) if v < *bv => {}
            Some((bv, _, bm)) if v == *bv => {
                let cand = to_mask(code);
                if cand < *bm {
                    best = Some((v, code, cand));
                }
            }
            _ => best = Some((v, code, to_mask(code))),
        }
    }
    let (_, _, mask) = best.expect("the cardinality range is never empty");
    Ok(IdentSolution {
        objective: p.evaluate(&mask)?,
        mask,
        optimality: Optimality::Proven,
        nodes_explored: nodes,
    })
}

struct Search<'a> {
    terms: &'a [(Vec<usize>, f64)],
    constant: f64,
    m: usize,
    lo: usize,
    hi: usize,
    tol: f64,
    assign: Vec<bool>,
    best_value: f64,
    best: Vec<bool>,
    nodes: u64,
    limits: Limits,
    started: Instant,
    stopped: bool,
}

impl Search<'_> {
    /// Upper bound at `depth` decided positions with `chosen` of them kept.
    fn bound(&self, depth: usize, chosen: usize) -> f64 {
        let room = self.hi - chosen;
        let mut total = self.constant;
        for (pos, c) in self.terms {
            let mut open = 0;
            let mut dead = false;
            for &q in pos {
                if q < depth {
                    if !self.assign[q] {
                        dead = true;
                        break;
                    }
                } else {
                    open += 1;
                }
            }
            if dead {
                continue;
            }
            if open == 0 || (*c > 0.0 && open <= room) {
                total += c;
            }
        }
        total
    }

    fn out_of_budget(&mut self) -> bool {
        if self.stopped {
            return true;
        }
        let over_time = self
            .limits
            .time_limit
            .is_some_and(|t| self.nodes % 1024 == 0 && self.started.elapsed() > t);
        if self.nodes >= self.limits.max_nodes || over_time {
            self.stopped = true;
        }
        self.stopped
    }

    fn dfs(&mut self, depth: usize, chosen: usize) {
        if self.out_of_budget() {
            return;
        }
        self.nodes += 1;
        if chosen > self.hi || chosen + (self.m - depth) < self.lo {
            return;
        }
        let bound = self.bound(depth, chosen);
        if depth == self.m {
            if bound > self.best_value + self.tol {
                self.best_value = bound;
                self.best = self.assign.clone();
            }
            return;
        }
        if bound <= self.best_value + self.tol {
            return;
        }
        self.assign[depth] = true;
        self.dfs(depth + 1, chosen + 1);
        self.assign[depth] = false;
        self.dfs(depth + 1, chosen);
    }
}

fn solve_bnb(p: &IdentProgram, limits: &Limits) -> IdentSolution {
    let m = p.relevant_vars.len();
    let (constant, terms) = p.signed_terms();
    let (lo, hi) = p.relevant_range();
    let scale = constant.abs() + terms.iter().map(|(_, c)| c.abs()).sum::<f64>();

    // Greedy incumbent: the first `hi` positions.
    let start: Vec<bool> = (0..m).map(|q| q < hi).collect();
    let start_value = constant
        + terms
            .iter()
            .filter(|(pos, _)| pos.iter().all(|&q| start[q]))
            .map(|(_, c)| c)
            .sum::<f64>();
    let mut s = Search {
        terms: &terms,
        constant,
        m,
        lo,
        hi,
        tol: 1e-12 * scale.max(f64::MIN_POSITIVE),
        assign: vec![false; m],
        best_value: start_value,
        best: start,
        nodes: 0,
        limits: *limits,
        started: Instant::now(),
        stopped: false,
    };
    s.dfs(0, 0);

    let chosen = (0..m).filter(|&q| s.best[q]).map(|q| p.relevant_vars[q]);
    let mask = p.complete(chosen);
    IdentSolution {
        objective: p.evaluate(&mask).expect("mask width matches the program"),
        mask,
        optimality: if s.stopped {
            Optimality::Heuristic
        } else {
            Optimality::Proven
        },
        nodes_explored: s.nodes,
    }
}

/// Eq.-4-style removal: the size-`n − r` mask whose surrogate value lies
/// farthest from `f̂([n])`, found by solving both directions.
#[derive(Debug, Clone, Serialize)]
pub struct Removal {
    pub removed: Vec<usize>,
    pub direction: Direction,
    pub full_value: f64,
    pub solution: IdentSolution,
    pub max: IdentSolution,
    pub min: IdentSolution,
}

pub fn identify_removal(spec: &FourierSpectrum, remove: usize, method: Method, limits: &Limits) -> Result<Removal> {
    let mobius = spec.to_mobius()?;
    let full_value = mobius.evaluate(&Mask::full(spec.n()))?;
    let max = solve(&IdentProgram::new(mobius.clone(), remove, Direction::Max)?, method, limits)?;
    let min = solve(&IdentProgram::new(mobius, remove, Direction::Min)?, method, limits)?;
    let (direction, solution) = if (full_value - min.objective).abs() > (full_value - max.objective).abs() {
        (Direction::Min, min.clone())
    } else {
        (Direction::Max, max.clone())
    };
    Ok(Removal {
        removed: solution.mask.complement().indices(),
        direction,
        full_value,
        solution,
        max,
        min,
    })
}
