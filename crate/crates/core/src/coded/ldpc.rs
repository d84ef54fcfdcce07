use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::llr::clip_llr;
use crate::error::{invalid_arg, Error, Result};

/// Binary LDPC code given by its parity-check matrix, with a systematic
/// encoder derived by Gaussian elimination over GF(2).
#[derive(Debug, Clone, PartialEq)]
pub struct LdpcCode {
    n: usize,
    /// Variable indices of each check.
    checks: Vec<Vec<usize>>,
    /// Check indices of each variable.
    vars: Vec<Vec<usize>>,
    info_positions: Vec<usize>,
    parity_positions: Vec<usize>,
    /// Row `i` gives parity bit `parity_positions[i]` as a dot product with
    /// the information bits, packed 64 per word.
    parity_rows: Vec<Vec<u64>>,
}

fn words(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl LdpcCode {
    /// Code from the variable lists of each check.
    pub fn from_checks(n: usize, checks: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 || checks.is_empty() {
            return Err(invalid_arg("empty parity-check matrix"));
        }
        let mut vars = vec![Vec::new(); n];
        let mut checks = checks;
        for (c, row) in checks.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            for &v in row.iter() {
                if v >= n {
                    return Err(invalid_arg(format!(
                        "check {c} references variable {v} >= {n}"
                    )));
                }
                vars[v].push(c);
            }
        }
        let m = checks.len();
        let w = words(n);
        let mut rows: Vec<Vec<u64>> = checks
            .iter()
            .map(|row| {
                let mut r = vec![0u64; w];
                for &v in row {
                    r[v / 64] |= 1 << (v % 64);
                }
                r
            })
            .collect();

        // reduced row echelon form; pivot columns carry the parity bits
        let mut pivots = Vec::new();
        let mut rank = 0;
        for col in 0..n {
            if rank == m {
                break;
            }
            let (wi, bit) = (col / 64, 1u64 << (col % 64));
            let Some(p) = (rank..m).find(|&r| rows[r][wi] & bit != 0) else {
                continue;
            };
            rows.swap(rank, p);
            let pivot = rows[rank].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != rank && row[wi] & bit != 0 {
                    row.iter_mut().zip(&pivot).for_each(|(a, b)| *a ^= b);
                }
            }
            pivots.push(col);
            rank += 1;
        }
        let is_pivot = {
            let mut f = vec![false; n];
            pivots.iter().for_each(|&c| f[c] = true);
            f
        };
        let info_positions: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        if info_positions.is_empty() {
            return Err(invalid_arg(
                "parity-check matrix has full column rank; no information bits",
            ));
        }
        let k = info_positions.len();
        let parity_rows = rows[..rank]
            .iter()
            .map(|row| {
                let mut packed = vec![0u64; words(k)];
                for (t, &c) in info_positions.iter().enumerate() {
                    if row[c / 64] >> (c % 64) & 1 == 1 {
                        packed[t / 64] |= 1 << (t % 64);
                    }
                }
                packed
            })
            .collect();
        Ok(Self {
            n,
            checks,
            vars,
            info_positions,
            parity_positions: pivots,
            parity_rows,
        })
    }

    /// Regular code built by progressive edge growth: every variable gets
    /// `var_degree` edges, each placed on the least-loaded check among those
    /// farthest from the variable in the current graph.
    pub fn peg(n: usize, m: usize, var_degree: usize, seed: u64) -> Result<Self> {
        if m == 0 || m >= n || var_degree == 0 || var_degree > m {
            return Err(invalid_arg(format!(
                "invalid PEG dimensions n={n}, m={m}, degree={var_degree}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut checks: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut vars: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut mark = vec![usize::MAX; m];
        let mut seen_var = vec![usize::MAX; n];
        let mut stamp = 0usize;
        for v in 0..n {
            for _ in 0..var_degree {
                let candidates: Vec<usize> = if vars[v].is_empty() {
                    (0..m).collect()
                } else {
                    stamp += 1;
                    farthest_checks(v, &checks, &vars, &mut mark, &mut seen_var, stamp)
                };
                let candidates: Vec<usize> = candidates
                    .into_iter()
                    .filter(|c| !vars[v].contains(c))
                    .collect();
                let min_deg = candidates
                    .iter()
                    .map(|&c| checks[c].len())
                    .min()
                    .expect("a free check exists");
                let best: Vec<usize> = candidates
                    .into_iter()
                    .filter(|&c| checks[c].len() == min_deg)
                    .collect();
                let c = best[rng.gen_range(0..best.len())];
                checks[c].push(v);
                vars[v].push(c);
            }
        }
        Self::from_checks(n, checks)
    }

    /// Built-in regular codes: (3,6) for rate 1/2 and (3,12) for rate 3/4.
    pub fn builtin(n: usize, rate_num: usize, rate_den: usize) -> Result<Self> {
        let (m, dv) = match (rate_num, rate_den) {
            (1, 2) => (n / 2, 3),
            (3, 4) => (n / 4, 3),
            _ => {
                return Err(Error::Unsupported(format!(
                    "no built-in code of rate {rate_num}/{rate_den}"
                )))
            }
        };
        if n == 0 || n * rate_num % rate_den != 0 || n % 4 != 0 {
            return Err(invalid_arg(format!(
                "block length {n} does not suit rate {rate_num}/{rate_den}"
            )));
        }
        // a rank-deficient draw would change k; retry a few seeds
        for seed in 0..16 {
            let code = Self::peg(n, m, dv, seed)?;
            if code.k() * rate_den == n * rate_num {
                return Ok(code);
            }
        }
        Err(Error::NumericalFailure(format!(
            "no full-rank PEG code found for n={n}, rate {rate_num}/{rate_den}"
        )))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.checks.len()
    }

    pub fn k(&self) -> usize {
        self.info_positions.len()
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n as f64
    }

    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    pub fn var_checks(&self) -> &[Vec<usize>] {
        &self.vars
    }

    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    pub fn edges(&self) -> usize {
        self.checks.iter().map(Vec::len).sum()
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k() {
            return Err(invalid_arg(format!(
                "expected {} information bits, got {}",
                self.k(),
                info.len()
            )));
        }
        let mut packed = vec![0u64; words(self.k())];
        for (t, &b) in info.iter().enumerate() {
            if b > 1 {
                return Err(invalid_arg("bits must be 0 or 1"));
            }
            packed[t / 64] |= (b as u64) << (t % 64);
        }
        let mut cw = vec![0u8; self.n];
        for (&pos, &b) in self.info_positions.iter().zip(info) {
            cw[pos] = b;
        }
        for (&pos, row) in self.parity_positions.iter().zip(&self.parity_rows) {
            let ones: u32 = row
                .iter()
                .zip(&packed)
                .map(|(a, b)| (a & b).count_ones())
                .sum();
            cw[pos] = (ones % 2) as u8;
        }
        Ok(cw)
    }

    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_positions.iter().map(|&p| codeword[p]).collect()
    }

    pub fn syndrome_ok(&self, codeword: &[u8]) -> bool {
        codeword.len() == self.n
            && self
                .checks
                .iter()
                .all(|row| row.iter().fold(0u8, |acc, &v| acc ^ codeword[v]) == 0)
    }

    /// Dense generator with rows spanning the code, `k × n`.
    pub fn generator_rows(&self) -> Vec<Vec<u8>> {
        (0..self.k())
            .map(|t| {
                let mut u = vec![0u8; self.k()];
                u[t] = 1;
                self.encode(&u).expect("unit vector has length k")
            })
            .collect()
    }

    pub fn parse_alist(text: &str) -> Result<Self> {
        let perr = |msg: String| Error::Parse {
            path: "<alist>".into(),
            message: msg,
        };
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate();
        let mut next_nums = |what: &str| -> Result<(usize, Vec<usize>)> {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| perr(format!("missing {what}")))?;
            let nums = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| perr(format!("line {}: bad number {t:?}", ln + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((ln + 1, nums))
        };
        let (ln, dims) = next_nums("dimensions")?;
        let [n, m] = dims[..] else {
            return Err(perr(format!("line {ln}: expected `n m`")));
        };
        let _ = next_nums("maximum degrees")?;
        let (ln, col_deg) = next_nums("column degrees")?;
        if col_deg.len() != n {
            return Err(perr(format!("line {ln}: expected {n} column degrees")));
        }
        let (ln, row_deg) = next_nums("row degrees")?;
        if row_deg.len() != m {
            return Err(perr(format!("line {ln}: expected {m} row degrees")));
        }
        let mut from_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (v, &deg) in col_deg.iter().enumerate() {
            let (ln, idx) = next_nums("column list")?;
            let idx: Vec<usize> = idx.into_iter().filter(|&i| i != 0).collect();
            if idx.len() != deg || idx.iter().any(|&i| i > m) {
                return Err(perr(format!(
                    "line {ln}: column {} list does not match its degree",
                    v + 1
                )));
            }
            idx.into_iter().for_each(|c| from_cols[c - 1].push(v));
        }
        let mut checks: Vec<Vec<usize>> = Vec::with_capacity(m);
        for (c, &deg) in row_deg.iter().enumerate() {
            let (ln, idx) = next_nums("row list")?;
            let mut idx: Vec<usize> = idx.into_iter().filter(|&i| i != 0).map(|i| i - 1).collect();
            if idx.len() != deg || idx.iter().any(|&i| i >= n) {
                return Err(perr(format!(
                    "line {ln}: row {} list does not match its degree",
                    c + 1
                )));
            }
            idx.sort_unstable();
            let mut col_view = from_cols[c].clone();
            col_view.sort_unstable();
            if idx != col_view {
                return Err(perr(format!(
                    "line {ln}: row {} disagrees with the column lists",
                    c + 1
                )));
            }
            checks.push(idx);
        }
        Self::from_checks(n, checks)
    }

    pub fn load_alist(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_alist(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn to_alist(&self) -> String {
        let (n, m) = (self.n, self.m());
        let max_col = self.vars.iter().map(Vec::len).max().unwrap_or(0);
        let max_row = self.checks.iter().map(Vec::len).max().unwrap_or(0);
        let join = |v: &mut dyn Iterator<Item = usize>| {
            v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        let mut s = String::new();
        let _ = writeln!(s, "{n} {m}");
        let _ = writeln!(s, "{max_col} {max_row}");
        let _ = writeln!(s, "{}", join(&mut self.vars.iter().map(Vec::len)));
        let _ = writeln!(s, "{}", join(&mut self.checks.iter().map(Vec::len)));
        for list in &self.vars {
            let mut l: Vec<usize> = list.iter().map(|c| c + 1).collect();
            l.sort_unstable();
            l.resize(max_col, 0);
            let _ = writeln!(s, "{}", join(&mut l.into_iter()));
        }
        for list in &self.checks {
            let mut l: Vec<usize> = list.iter().map(|v| v + 1).collect();
            l.resize(max_row, 0);
            let _ = writeln!(s, "{}", join(&mut l.into_iter()));
        }
        s
    }

    /// Sum-product decoding. LLRs are positive for bit 0. Stops early once
    /// every posterior is nonzero and the hard decisions satisfy all checks.
    pub fn decode(&self, channel: &[f64], max_iters: usize) -> Result<DecodeOutput> {
        if channel.len() != self.n {
            return Err(invalid_arg(format!(
                "expected {} LLRs, got {}",
                self.n,
                channel.len()
            )));
        }
        let input: Vec<f64> = channel.iter().map(|&l| clip_llr(l)).collect();
        let edges = self.edges();
        // edge e belongs to check edge_check[e], variable edge_var[e]
        let mut edge_var = Vec::with_capacity(edges);
        let mut var_edges: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        let mut check_start = Vec::with_capacity(self.m() + 1);
        for row in &self.checks {
            check_start.push(edge_var.len());
            for &v in row {
                var_edges[v].push(edge_var.len());
                edge_var.push(v);
            }
        }
        check_start.push(edge_var.len());

        let mut c2v = vec![0.0f64; edges];
        let mut v2c = vec![0.0f64; edges];
        let mut post = input.clone();
        let mut hard = vec![0u8; self.n];
        let mut iterations = 0;
        let mut converged = false;
        let mut fwd = Vec::new();
        for it in 1..=max_iters {
            iterations = it;
            for (e, &v) in edge_var.iter().enumerate() {
                v2c[e] = post[v] - c2v[e];
            }
            for c in 0..self.m() {
                let (a, b) = (check_start[c], check_start[c + 1]);
                fwd.clear();
                let mut acc = 1.0;
                for &m in &v2c[a..b] {
                    fwd.push(acc);
                    acc *= (m / 2.0).tanh();
                }
                let mut back = 1.0;
                for e in (a..b).rev() {
                    let t = (fwd[e - a] * back).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
                    c2v[e] = clip_llr(2.0 * t.atanh());
                    back *= (v2c[e] / 2.0).tanh();
                }
            }
            for v in 0..self.n {
                post[v] = input[v] + var_edges[v].iter().map(|&e| c2v[e]).sum::<f64>();
                hard[v] = u8::from(post[v] < 0.0);
            }
            if post.iter().all(|&l| l != 0.0) && self.syndrome_ok(&hard) {
                converged = true;
                break;
            }
        }
        let extrinsic = post
            .iter()
            .zip(&input)
            .map(|(p, i)| clip_llr(p - i))
            .collect();
        Ok(DecodeOutput {
            codeword: hard,
            posterior: post.into_iter().map(clip_llr).collect(),
            extrinsic,
            iterations,
            converged,
        })
    }
}

/// Checks not reachable from `v` at the deepest BFS level before the reached
/// set saturates or stops growing.
fn farthest_checks(
    v: usize,
    checks: &[Vec<usize>],
    vars: &[Vec<usize>],
    mark: &mut [usize],
    seen_var: &mut [usize],
    stamp: usize,
) -> Vec<usize> {
    let m = checks.len();
    let mut frontier: VecDeque<usize> = VecDeque::new();
    let mut reached = 0;
    seen_var[v] = stamp;
    for &c in &vars[v] {
        if mark[c] != stamp {
            mark[c] = stamp;
            reached += 1;
            frontier.push_back(c);
        }
    }
    loop {
        let before: Vec<bool> = (0..m).map(|c| mark[c] == stamp).collect();
        let mut next = VecDeque::new();
        for &c in &frontier {
            for &u in &checks[c] {
                if seen_var[u] == stamp {
                    continue;
                }
                seen_var[u] = stamp;
                for &c2 in &vars[u] {
                    if mark[c2] != stamp {
                        mark[c2] = stamp;
                        reached += 1;
                        next.push_back(c2);
                    }
                }
            }
        }
        if next.is_empty() || reached == m {
            // saturated: fall back to the level before; stalled: current complement
            let source: Vec<bool> = if reached == m && !next.is_empty() {
                before
            } else {
                (0..m).map(|c| mark[c] == stamp).collect()
            };
            let out: Vec<usize> = (0..m).filter(|&c| !source[c]).collect();
            return if out.is_empty() {
                (0..m).collect()
            } else {
                out
            };
        }
        frontier = next;
    }
}

/// Result of one decoder activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub codeword: Vec<u8>,
    pub posterior: Vec<f64>,
    /// Posterior minus the input LLRs.
    pub extrinsic: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}
