//! Candidate-function library over latent state and latent input.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FunctionLibrarySpec {
    /// Maximum total degree of monomials over `(ξ, ξ̇)`.
    pub poly_degree: usize,
    pub include_constant: bool,
    pub include_sin_states: bool,
    pub include_sin_velocities: bool,
    pub include_inputs: bool,
}

impl Default for FunctionLibrarySpec {
    fn default() -> Self {
        Self {
            poly_degree: 2,
            include_constant: true,
            include_sin_states: true,
            include_sin_velocities: true,
            include_inputs: true,
        }
    }
}

/// One library column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Constant,
    /// Product of the listed variables, indices into `[ξ_1..ξ_l, ξ̇_1..ξ̇_l]`,
    /// non-decreasing.
    Monomial(Vec<usize>),
    SinState(usize),
    SinVelocity(usize),
    Input(usize),
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n.saturating_sub(k));
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Non-decreasing index tuples of length `k` over `0..n` in lexicographic order.
fn multisets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; k];
    if n == 0 || k == 0 {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] + 1 < n {
                let v = cur[i] + 1;
                for c in &mut cur[i..] {
                    *c = v;
                }
                break;
            }
        }
    }
}

impl FunctionLibrarySpec {
    pub fn validate(&self) -> Result<()> {
        if !self.include_constant
            && self.poly_degree == 0
            && !self.include_sin_states
            && !self.include_sin_velocities
            && !self.include_inputs
        {
            return Err(Error::Config("function library has no enabled term class".into()));
        }
        Ok(())
    }

    /// Number of terms for latent dimension `l`, from the closed form.
    pub fn term_count(&self, l: usize) -> usize {
        let poly: usize = (1..=self.poly_degree).map(|k| binomial(2 * l + k - 1, k)).sum();
        usize::from(self.include_constant)
            + poly
            + l * usize::from(self.include_sin_states)
            + l * usize::from(self.include_sin_velocities)
            + l * usize::from(self.include_inputs)
    }

    /// Terms in canonical order.
    pub fn terms(&self, l: usize) -> Vec<Term> {
        let mut terms = Vec::new();
        if self.include_constant {
            terms.push(Term::Constant);
        }
        for k in 1..=self.poly_degree {
            terms.extend(multisets(2 * l, k).into_iter().map(Term::Monomial));
        }
        if self.include_sin_states {
            terms.extend((0..l).map(Term::SinState));
        }
        if self.include_sin_velocities {
            terms.extend((0..l).map(Term::SinVelocity));
        }
        if self.include_inputs {
            terms.extend((0..l).map(Term::Input));
        }
        terms
    }

    pub fn term_names(&self, l: usize) -> Vec<String> {
        self.terms(l).iter().map(|t| term_name(t, l)).collect()
    }

    pub fn library(&self, l: usize) -> Result<Library> {
        self.validate()?;
        if l == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        Ok(Library {
            spec: self.clone(),
            l,
            terms: self.terms(l),
        })
    }
}

fn var_name(v: usize, l: usize) -> String {
    if v < l {
        format!("ξ_{}", v + 1)
    } else {
        format!("ξ\u{307}_{}", v - l + 1)
    }
}

pub fn term_name(term: &Term, l: usize) -> String {
    match term {
        Term::Constant => "1".to_string(),
        Term::Monomial(vars) => {
            let mut parts: Vec<String> = Vec::new();
            let mut i = 0;
            while i < vars.len() {
                let run = vars[i..].iter().take_while(|&&v| v == vars[i]).count();
                let name = var_name(vars[i], l);
                parts.push(if run > 1 { format!("{name}^{run}") } else { name });
                i += run;
            }
            parts.join("·")
        }
        Term::SinState(i) => format!("sin(ξ_{})", i + 1),
        Term::SinVelocity(i) => format!("sin(ξ\u{307}_{})", i + 1),
        Term::Input(i) => format!("ν_{}", i + 1),
    }
}

/// A library specification instantiated for one latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Library {
    pub spec: FunctionLibrarySpec,
    pub l: usize,
    pub terms: Vec<Term>,
}

impl Library {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(|t| term_name(t, self.l)).collect()
    }

    fn check(&self, xi: &[f64], dxi: &[f64], nu: &[f64]) -> Result<()> {
        for (what, v) in [("xi", xi), ("dxi", dxi), ("nu", nu)] {
            if v.len() != self.l {
                return Err(Error::shape(what, self.l, v.len()));
            }
        }
        Ok(())
    }

    fn fill(&self, xi: &[f64], dxi: &[f64], nu: &[f64], out: &mut [f64]) {
        let var = |v: usize| if v < self.l { xi[v] } else { dxi[v - self.l] };
        for (slot, term) in out.iter_mut().zip(&self.terms) {
            *slot = match term {
                Term::Constant => 1.0,
                Term::Monomial(vars) => vars.iter().map(|&v| var(v)).product(),
                Term::SinState(i) => xi[*i].sin(),
                Term::SinVelocity(i) => dxi[*i].sin(),
                Term::Input(i) => nu[*i],
            };
        }
    }

    /// Evaluates every term at one sample.
    pub fn row(&self, xi: &DVector<f64>, dxi: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(xi.as_slice(), dxi.as_slice(), nu.as_slice())?;
        let mut out = DVector::zeros(self.len());
        self.fill(xi.as_slice(), dxi.as_slice(), nu.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `N × p` library matrix from row-per-sample latent signals.
    pub fn matrix(&self, xi: &DMatrix<f64>, dxi: &DMatrix<f64>, nu: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = xi.nrows();
        for (what, m) in [("dxi", dxi), ("nu", nu)] {
            if m.nrows() != n {
                return Err(Error::shape(what, n, m.nrows()));
            }
        }
        for (what, m) in [("xi", xi), ("dxi", dxi), ("nu", nu)] {
            if m.ncols() != self.l {
                return Err(Error::shape(what, self.l, m.ncols()));
            }
        }
        let mut theta = DMatrix::zeros(n, self.len());
        let mut buf = vec![0.0; self.len()];
        for r in 0..n {
            let a: Vec<f64> = xi.row(r).iter().copied().collect();
            let b: Vec<f64> = dxi.row(r).iter().copied().collect();
            let c: Vec<f64> = nu.row(r).iter().copied().collect();
            self.fill(&a, &b, &c, &mut buf);
            for (k, v) in buf.iter().enumerate() {
                theta[(r, k)] = *v;
            }
        }
        Ok(theta)
    }
}
