//! Sparse LDLᵀ factorization without pivoting, for quasi-definite and
//! inertia-corrected KKT matrices.

use std::collections::VecDeque;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Symbolic analysis of a symmetric pattern under a fixed ordering.
///
/// Entries are given as `(row, col)` pairs of either triangle; repeated pairs
/// are summed. Numeric values passed to [`Symbolic::factor`] must follow the
/// order of the pairs used to build the analysis.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    ap: Vec<usize>,
    ai: Vec<usize>,
    slots: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
}

/// Numeric factor `P A Pᵀ = L D Lᵀ`.
#[derive(Debug, Clone)]
pub struct Factor {
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl Symbolic {
    /// `perm[new] = old`; `None` keeps the natural order.
    pub fn new(n: usize, entries: &[(usize, usize)], perm: Option<Vec<usize>>) -> Result<Self> {
        let perm = perm.unwrap_or_else(|| (0..n).collect());
        if perm.len() != n {
            return Err(Error::Dimension(format!("permutation of length {} for n = {n}", perm.len())));
        }
        let mut iperm = vec![NONE; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || iperm[old] != NONE {
                return Err(Error::InvalidArgument("ordering is not a permutation".into()));
            }
            iperm[old] = new;
        }
        // upper triangle of the permuted matrix, with every diagonal present
        let mut coords: Vec<(usize, usize)> = Vec::with_capacity(entries.len() + n);
        for &(i, j) in entries {
            if i >= n || j >= n {
                return Err(Error::Dimension(format!("entry ({i}, {j}) outside of {n} x {n}")));
            }
            let (a, b) = (iperm[i], iperm[j]);
            coords.push((a.min(b), a.max(b)));
        }
        coords.extend((0..n).map(|k| (k, k)));
        let mut uniq = coords.clone();
        uniq.sort_unstable_by_key(|&(r, c)| (c, r));
        uniq.dedup();
        let mut ap = vec![0; n + 1];
        let mut ai = Vec::with_capacity(uniq.len());
        for &(r, c) in &uniq {
            ap[c + 1] += 1;
            ai.push(r);
        }
        for c in 0..n {
            ap[c + 1] += ap[c];
        }
        let slots = coords[..entries.len()]
            .iter()
            .map(|rc| uniq.binary_search_by_key(&(rc.1, rc.0), |&(r, c)| (c, r)).unwrap())
            .collect();

        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &r in &ai[ap[j]..ap[j + 1]] {
                let mut i = r;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        Ok(Self { n, perm, iperm, ap, ai, slots, etree, lp })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Nonzeros in the strictly lower factor.
    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Factorizes values given in the order of the analysed entries, adding
    /// `shift[i]` to diagonal `i` (original numbering) when supplied.
    pub fn factor(&self, values: &[f64], shift: Option<&[f64]>) -> Result<Factor> {
        let n = self.n;
        if values.len() != self.slots.len() {
            return Err(Error::Dimension(format!("{} values for {} entries", values.len(), self.slots.len())));
        }
        let mut ax = vec![0.0; self.ai.len()];
        for (&s, &v) in self.slots.iter().zip(values) {
            ax[s] += v;
        }
        if let Some(shift) = shift {
            for (old, &delta) in shift.iter().enumerate() {
                let k = self.iperm[old];
                // the diagonal is the last entry of its upper column
                ax[self.ap[k + 1] - 1] += delta;
            }
        }

        let nnz = self.lp[n];
        let mut li = vec![0; nnz];
        let mut lx = vec![0.0; nnz];
        let mut d = vec![0.0f64; n];
        let mut dinv = vec![0.0; n];
        let mut next: Vec<usize> = self.lp[..n].to_vec();
        let mut marked = vec![false; n];
        let mut yvals = vec![0.0; n];
        let mut yidx: Vec<usize> = Vec::with_capacity(n);
        let mut ebuf: Vec<usize> = Vec::with_capacity(n);

        for k in 0..n {
            yidx.clear();
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    d[k] = ax[p];
                    continue;
                }
                yvals[b] = ax[p];
                if !marked[b] {
                    marked[b] = true;
                    ebuf.clear();
                    ebuf.push(b);
                    let mut i = self.etree[b];
                    while i != NONE && i < k && !marked[i] {
                        marked[i] = true;
                        ebuf.push(i);
                        i = self.etree[i];
                    }
                    yidx.extend(ebuf.iter().rev());
                }
            }
            for &c in yidx.iter().rev() {
                let yc = yvals[c];
                for j in self.lp[c]..next[c] {
                    yvals[li[j]] -= lx[j] * yc;
                }
                li[next[c]] = k;
                let l = yc * dinv[c];
                lx[next[c]] = l;
                d[k] -= yc * l;
                next[c] += 1;
                yvals[c] = 0.0;
                marked[c] = false;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(Error::Factorization(format!("pivot {k} is {}", d[k])));
            }
            dinv[k] = 1.0 / d[k];
        }
        Ok(Factor { perm: self.perm.clone(), lp: self.lp.clone(), li, lx, d })
    }
}

impl Factor {
    /// Numbers of positive and negative pivots.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&v| v > 0.0).count();
        (pos, self.d.len() - pos)
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut x: Vec<f64> = self.perm.iter().map(|&o| rhs[o]).collect();
        for i in 0..n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for (xi, di) in x.iter_mut().zip(&self.d) {
            *xi /= di;
        }
        for i in (0..n).rev() {
            let mut xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                xi -= self.lx[j] * x[self.li[j]];
            }
            x[i] = xi;
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric pattern, `perm[new] = old`.
pub fn rcm(n: usize, entries: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in entries {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (deg[v], v));
    for &start in &by_degree {
        if seen[start] {
            continue;
        }
        let root = peripheral(start, &adj, &deg);
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            next.sort_by_key(|&w| (deg[w], w));
            for w in next {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Pseudo-peripheral node of the component of `start`.
fn peripheral(start: usize, adj: &[Vec<usize>], deg: &[usize]) -> usize {
    let mut root = start;
    let mut ecc = 0;
    loop {
        let levels = level_structure(root, adj);
        let last = levels.last().unwrap();
        let cand = *last.iter().min_by_key(|&&v| (deg[v], v)).unwrap();
        if levels.len() - 1 <= ecc {
            return root;
        }
        ecc = levels.len() - 1;
        root = cand;
    }
}

fn level_structure(root: usize, adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut depth = vec![NONE; adj.len()];
    depth[root] = 0;
    let mut levels = vec![vec![root]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &w in &adj[v] {
                if depth[w] == NONE {
                    depth[w] = levels.len();
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

/// One-shot solve of a sparse symmetric system given as triplets, with an RCM
/// ordering.
pub fn ldlt_solve(n: usize, triplets: &[(usize, usize, f64)], rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != n {
        return Err(Error::Dimension(format!("rhs of length {} for n = {n}", rhs.len())));
    }
    let pairs: Vec<(usize, usize)> = triplets.iter().map(|&(i, j, _)| (i, j)).collect();
    let sym = Symbolic::new(n, &pairs, Some(rcm(n, &pairs)))?;
    let values: Vec<f64> = triplets.iter().map(|t| t.2).collect();
    Ok(sym.factor(&values, None)?.solve(rhs))
}
