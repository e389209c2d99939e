//! Truncated multivariate Taylor jets.
//!
//! A [`Jet`] stores the Taylor coefficients `f^(α)(x₀) / α!` of a scalar
//! function for every multi-index `α` with `|α| ≤ order`, laid out by total
//! degree. Because the layout of a lower order is a prefix of a higher one,
//! truncation is a slice and mixed-order arithmetic truncates to the smaller
//! order automatically.

use std::collections::HashMap;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::JetError;

/// Highest order accepted by the public [`jet_of_map`] entry point.
pub const MAX_ORDER: usize = 4;

/// Monomial table shared by all jets of a given `(dim, order)`.
#[derive(Debug)]
pub struct Layout {
    dim: usize,
    order: usize,
    exps: Vec<u8>,
    degree: Vec<u8>,
    /// `offsets[k]` counts the monomials of degree `< k`.
    offsets: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    triples: Vec<(u32, u32, u32)>,
    /// `raise[m * dim + i]` is the index of `m + e_i`, or `NONE`.
    raise: Vec<u32>,
    factorial: Vec<f64>,
}

const NONE: u32 = u32::MAX;

fn monomials_of_degree(dim: usize, deg: usize, out: &mut Vec<Vec<u8>>) {
    fn rec(dim: usize, pos: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if pos + 1 == dim {
            cur[pos] = left as u8;
            out.push(cur.clone());
            cur[pos] = 0;
            return;
        }
        for e in (0..=left).rev() {
            cur[pos] = e as u8;
            rec(dim, pos + 1, left - e, cur, out);
        }
        cur[pos] = 0;
    }
    if dim == 0 {
        if deg == 0 {
            out.push(Vec::new());
        }
        return;
    }
    let mut cur = vec![0u8; dim];
    rec(dim, 0, deg, &mut cur, out);
}

impl Layout {
    fn build(dim: usize, order: usize) -> Self {
        let mut monos = Vec::new();
        let mut offsets = vec![0usize];
        for k in 0..=order {
            monomials_of_degree(dim, k, &mut monos);
            offsets.push(monos.len());
        }
        let size = monos.len();
        let mut exps = Vec::with_capacity(size * dim);
        let mut degree = Vec::with_capacity(size);
        let mut factorial = Vec::with_capacity(size);
        let mut index = HashMap::with_capacity(size);
        for (i, m) in monos.iter().enumerate() {
            exps.extend_from_slice(m);
            degree.push(m.iter().map(|&e| e as u32).sum::<u32>() as u8);
            factorial.push(
                m.iter()
                    .map(|&e| (1..=e as u64).product::<u64>() as f64)
                    .product(),
            );
            index.insert(m.clone(), i);
        }
        let mut raise = vec![NONE; size * dim];
        let mut buf = vec![0u8; dim];
        for (m, mono) in monos.iter().enumerate() {
            if (degree[m] as usize) < order {
                for i in 0..dim {
                    buf.copy_from_slice(mono);
                    buf[i] += 1;
                    raise[m * dim + i] = index[&buf] as u32;
                }
            }
        }
        let mut triples = Vec::new();
        for a in 0..size {
            let da = degree[a] as usize;
            for b in 0..offsets[order - da + 1] {
                for i in 0..dim {
                    buf[i] = monos[a][i] + monos[b][i];
                }
                triples.push((a as u32, b as u32, index[&buf] as u32));
            }
        }
        Layout {
            dim,
            order,
            exps,
            degree,
            offsets,
            index,
            triples,
            raise,
            factorial,
        }
    }

    /// Shared layout for `dim` variables truncated at total degree `order`.
    pub fn get(dim: usize, order: usize) -> Arc<Layout> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Layout>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(l) = cache
            .lock()
            .expect("layout cache poisoned")
            .get(&(dim, order))
        {
            return l.clone();
        }
        let built = Arc::new(Layout::build(dim, order));
        cache
            .lock()
            .expect("layout cache poisoned")
            .entry((dim, order))
            .or_insert(built)
            .clone()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of coefficients.
    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }

    /// Number of coefficients of total degree `≤ k`.
    pub fn len_upto(&self, k: usize) -> usize {
        self.offsets[k.min(self.order) + 1]
    }

    pub fn exponents(&self, m: usize) -> &[u8] {
        &self.exps[m * self.dim..(m + 1) * self.dim]
    }

    pub fn degree(&self, m: usize) -> usize {
        self.degree[m] as usize
    }

    pub fn index_of(&self, exps: &[u8]) -> Option<usize> {
        self.index.get(exps).copied()
    }

    fn raised(&self, m: usize, i: usize) -> Option<usize> {
        let r = self.raise[m * self.dim + i];
        (r != NONE).then_some(r as usize)
    }
}

/// A truncated Taylor expansion of a scalar function at a point.
#[derive(Clone)]
pub struct Jet {
    layout: Arc<Layout>,
    coeffs: Vec<f64>,
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Jet")
            .field("dim", &self.dim())
            .field("order", &self.order())
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl Jet {
    pub fn constant(layout: &Arc<Layout>, value: f64) -> Jet {
        let mut coeffs = vec![0.0; layout.len()];
        coeffs[0] = value;
        Jet {
            layout: layout.clone(),
            coeffs,
        }
    }

    /// The coordinate function `x_i` expanded at `x_i = value`.
    pub fn variable(layout: &Arc<Layout>, i: usize, value: f64) -> Jet {
        let mut j = Jet::constant(layout, value);
        if layout.order >= 1 {
            j.coeffs[1 + i] = 1.0;
        }
        j
    }

    /// Seeds one variable jet per coordinate of `x`.
    pub fn variables(x: &[f64], order: usize) -> Vec<Jet> {
        let layout = Layout::get(x.len(), order);
        x.iter()
            .enumerate()
            .map(|(i, &v)| Jet::variable(&layout, i, v))
            .collect()
    }

    /// Constant jets in an order-0 layout, for plain evaluation.
    pub fn plain(x: &[f64]) -> Vec<Jet> {
        let layout = Layout::get(x.len(), 0);
        x.iter().map(|&v| Jet::constant(&layout, v)).collect()
    }

    pub fn from_coeffs(layout: &Arc<Layout>, coeffs: Vec<f64>) -> Jet {
        assert_eq!(
            coeffs.len(),
            layout.len(),
            "coefficient count does not match layout"
        );
        Jet {
            layout: layout.clone(),
            coeffs,
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// A constant jet of the same layout.
    pub fn lift(&self, v: f64) -> Jet {
        Jet::constant(&self.layout, v)
    }

    /// Taylor coefficient for the given exponent vector (zero beyond the order).
    pub fn taylor(&self, exps: &[u8]) -> f64 {
        self.layout.index_of(exps).map_or(0.0, |m| self.coeffs[m])
    }

    /// Partial derivative `∂_{i₁}…∂_{i_k} f` at the base point.
    pub fn derivative(&self, indices: &[usize]) -> f64 {
        let mut e = vec![0u8; self.dim()];
        for &i in indices {
            e[i] += 1;
        }
        match self.layout.index_of(&e) {
            Some(m) => self.coeffs[m] * self.layout.factorial[m],
            None => 0.0,
        }
    }

    pub fn gradient(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.derivative(&[i])).collect()
    }

    pub fn hessian(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.derivative(&[i, j])).collect())
            .collect()
    }

    /// Dense symmetric tensor of `k`-th derivatives, row-major over `d^k` entries.
    pub fn tensor(&self, k: usize) -> Vec<f64> {
        let d = self.dim();
        let total = d.pow(k as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; k];
        for flat in 0..total {
            let mut r = flat;
            for slot in idx.iter_mut().rev() {
                *slot = r % d;
                r /= d;
            }
            out.push(self.derivative(&idx));
        }
        out
    }

    /// Drops all coefficients above `order`.
    pub fn truncate(&self, order: usize) -> Jet {
        if order >= self.order() {
            return self.clone();
        }
        let layout = Layout::get(self.dim(), order);
        let n = layout.len();
        Jet {
            layout,
            coeffs: self.coeffs[..n].to_vec(),
        }
    }

    /// `∂_i` of the jet; loses one order.
    pub fn partial(&self, i: usize) -> Jet {
        let order = self.order().saturating_sub(1);
        let layout = Layout::get(self.dim(), order);
        let mut coeffs = vec![0.0; layout.len()];
        if self.order() > 0 {
            for (m, c) in coeffs.iter_mut().enumerate() {
                let r = self.layout.raised(m, i).expect("raise within order");
                *c = self.coeffs[r] * (self.layout.exponents(r)[i] as f64);
            }
        }
        Jet { layout, coeffs }
    }

    /// Antiderivative in variable `i` vanishing on `x_i = x_i⁰`; the top order
    /// is filled, the result keeps the same layout.
    pub fn integrate(&self, i: usize) -> Jet {
        let mut coeffs = vec![0.0; self.coeffs.len()];
        let top = self.layout.len_upto(self.order().saturating_sub(1));
        if self.order() > 0 {
            for (m, &c) in self.coeffs[..top].iter().enumerate() {
                let r = self.layout.raised(m, i).expect("raise within order");
                coeffs[r] = c / (self.layout.exponents(r)[i] as f64);
            }
        }
        Jet {
            layout: self.layout.clone(),
            coeffs,
        }
    }

    /// Directional derivative along `v` with one order lost.
    pub fn directional(&self, v: &[f64]) -> Jet {
        let mut acc: Option<Jet> = None;
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let term = self.partial(i) * vi;
            acc = Some(match acc {
                Some(a) => a + term,
                None => term,
            });
        }
        acc.unwrap_or_else(|| {
            Jet::constant(
                &Layout::get(self.dim(), self.order().saturating_sub(1)),
                0.0,
            )
        })
    }

    fn zip_layout(&self, other: &Jet) -> Arc<Layout> {
        assert_eq!(self.dim(), other.dim(), "jet dimension mismatch");
        if self.order() <= other.order() {
            self.layout.clone()
        } else {
            other.layout.clone()
        }
    }

    fn zip_with(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        let layout = self.zip_layout(other);
        let coeffs = self.coeffs[..layout.len()]
            .iter()
            .zip(&other.coeffs[..layout.len()])
            .map(|(&a, &b)| f(a, b))
            .collect();
        Jet { layout, coeffs }
    }

    fn mul_jet(&self, other: &Jet) -> Jet {
        let layout = self.zip_layout(other);
        let mut coeffs = vec![0.0; layout.len()];
        let (x, y) = (&self.coeffs, &other.coeffs);
        for &(a, b, c) in &layout.triples {
            coeffs[c as usize] += x[a as usize] * y[b as usize];
        }
        Jet { layout, coeffs }
    }

    fn map_coeffs(&self, f: impl Fn(f64) -> f64) -> Jet {
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().map(|&c| f(c)).collect(),
        }
    }

    /// Evaluates `Σ_k series[k] (self − self₀)^k`, the Taylor series of a
    /// univariate function around the value of `self`.
    pub fn compose_series(&self, series: &[f64]) -> Jet {
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let top = series.len().min(self.order() + 1);
        let mut r = self.lift(*series.get(top.saturating_sub(1)).unwrap_or(&0.0));
        for k in (0..top.saturating_sub(1)).rev() {
            r = r.mul_jet(&h);
            r.coeffs[0] += series[k];
        }
        r
    }

    pub fn recip(&self) -> Jet {
        let u = self.value();
        let mut s = Vec::with_capacity(self.order() + 1);
        let mut t = 1.0 / u;
        for _ in 0..=self.order() {
            s.push(t);
            t *= -1.0 / u;
        }
        self.compose_series(&s)
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let s: Vec<f64> = (0..=self.order()).map(|k| e / factorial(k)).collect();
        self.compose_series(&s)
    }

    pub fn ln(&self) -> Jet {
        let u = self.value();
        let mut s = vec![u.ln()];
        for k in 1..=self.order() {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            s.push(sign / (k as f64 * u.powi(k as i32)));
        }
        self.compose_series(&s)
    }

    /// `self^p` for real `p`, requires a positive value unless `p` is integral.
    pub fn powf(&self, p: f64) -> Jet {
        let u = self.value();
        let mut s = Vec::with_capacity(self.order() + 1);
        let mut coef = 1.0;
        for k in 0..=self.order() {
            s.push(coef * u.powf(p - k as f64));
            coef *= (p - k as f64) / (k as f64 + 1.0);
        }
        self.compose_series(&s)
    }

    pub fn powi(&self, n: u32) -> Jet {
        let mut r = self.lift(1.0);
        for _ in 0..n {
            r = r.mul_jet(self);
        }
        r
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cyc = [s, c, -s, -c];
        let series: Vec<f64> = (0..=self.order())
            .map(|k| cyc[k % 4] / factorial(k))
            .collect();
        self.compose_series(&series)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cyc = [c, -s, -c, s];
        let series: Vec<f64> = (0..=self.order())
            .map(|k| cyc[k % 4] / factorial(k))
            .collect();
        self.compose_series(&series)
    }

    /// Substitutes `inner` into a local Taylor jet `self` expanded at the
    /// values of `inner`. Result order is the smaller of the two.
    pub fn compose(&self, inner: &[Jet]) -> Jet {
        assert_eq!(inner.len(), self.dim(), "composition arity mismatch");
        let target = inner
            .first()
            .map(|j| j.layout.clone())
            .unwrap_or_else(|| Layout::get(0, 0));
        let order = self.order().min(target.order);
        let layout = Layout::get(target.dim, order);
        let steps: Vec<Jet> = inner
            .iter()
            .map(|j| {
                let mut h = j.truncate(order);
                h.coeffs[0] = 0.0;
                h
            })
            .collect();
        let mut powers: Vec<Vec<Jet>> = Vec::with_capacity(steps.len());
        for h in &steps {
            let mut p = vec![Jet::constant(&layout, 1.0)];
            for k in 1..=order {
                let next = p[k - 1].mul_jet(h);
                p.push(next);
            }
            powers.push(p);
        }
        let mut out = Jet::constant(&layout, 0.0);
        for m in 0..self.layout.len_upto(order) {
            let c = self.coeffs[m];
            if c == 0.0 {
                continue;
            }
            let mut term: Option<Jet> = None;
            for (v, &e) in self.layout.exponents(m).iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let p = &powers[v][e as usize];
                term = Some(match term {
                    Some(t) => t.mul_jet(p),
                    None => p.clone(),
                });
            }
            match term {
                Some(t) => {
                    for (o, x) in out.coeffs.iter_mut().zip(&t.coeffs) {
                        *o += c * x;
                    }
                }
                None => out.coeffs[0] += c,
            }
        }
        out
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

macro_rules! binop {
    ($tr:ident, $m:ident, $body:expr) => {
        impl $tr<&Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(self, rhs)
            }
        }
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                (&self).$m(rhs)
            }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                self.$m(&rhs)
            }
        }
    };
}

binop!(Add, add, |a, b| a.zip_with(b, |x, y| x + y));
binop!(Sub, sub, |a, b| a.zip_with(b, |x, y| x - y));
binop!(Mul, mul, |a, b| a.mul_jet(b));
binop!(Div, div, |a, b| a.mul_jet(&b.recip()));

macro_rules! scalar_op {
    ($tr:ident, $m:ident, $jet_f64:expr, $f64_jet:expr) => {
        impl $tr<f64> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: f64) -> Jet {
                let f: fn(&Jet, f64) -> Jet = $jet_f64;
                f(self, rhs)
            }
        }
        impl $tr<f64> for Jet {
            type Output = Jet;
            fn $m(self, rhs: f64) -> Jet {
                (&self).$m(rhs)
            }
        }
        impl $tr<&Jet> for f64 {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                let f: fn(f64, &Jet) -> Jet = $f64_jet;
                f(self, rhs)
            }
        }
        impl $tr<Jet> for f64 {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                self.$m(&rhs)
            }
        }
    };
}

scalar_op!(
    Add,
    add,
    |a, s| {
        let mut r = a.clone();
        r.coeffs[0] += s;
        r
    },
    |s, a| a + s
);
scalar_op!(
    Sub,
    sub,
    |a, s| {
        let mut r = a.clone();
        r.coeffs[0] -= s;
        r
    },
    |s, a| {
        let mut r = -a;
        r.coeffs[0] += s;
        r
    }
);
scalar_op!(Mul, mul, |a, s| a.map_coeffs(|c| c * s), |s, a| a * s);
scalar_op!(Div, div, |a, s| a.map_coeffs(|c| c / s), |s, a| a.recip()
    * s);

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.map_coeffs(|c| -c)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        -&self
    }
}

impl AddAssign<&Jet> for Jet {
    fn add_assign(&mut self, rhs: &Jet) {
        *self = &*self + rhs;
    }
}

impl AddAssign<Jet> for Jet {
    fn add_assign(&mut self, rhs: Jet) {
        *self = &*self + &rhs;
    }
}

impl SubAssign<&Jet> for Jet {
    fn sub_assign(&mut self, rhs: &Jet) {
        *self = &*self - rhs;
    }
}

impl SubAssign<Jet> for Jet {
    fn sub_assign(&mut self, rhs: Jet) {
        *self = &*self - &rhs;
    }
}

impl MulAssign<&Jet> for Jet {
    fn mul_assign(&mut self, rhs: &Jet) {
        *self = &*self * rhs;
    }
}

impl MulAssign<f64> for Jet {
    fn mul_assign(&mut self, rhs: f64) {
        for c in &mut self.coeffs {
            *c *= rhs;
        }
    }
}

/// A smooth map `ℝ^n → ℝ^m` evaluable on jets.
pub trait SmoothMap: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval(&self, x: &[Jet]) -> Result<Vec<Jet>, JetError>;
    fn label(&self) -> Option<&str> {
        None
    }
}

pub type SmoothMapHandle = Arc<dyn SmoothMap>;

type JetFn = dyn Fn(&[Jet]) -> Result<Vec<Jet>, JetError> + Send + Sync;

/// Closure-backed [`SmoothMap`].
pub struct FnMap {
    dim_in: usize,
    dim_out: usize,
    label: Option<String>,
    f: Box<JetFn>,
}

impl FnMap {
    pub fn new(
        dim_in: usize,
        dim_out: usize,
        f: impl Fn(&[Jet]) -> Result<Vec<Jet>, JetError> + Send + Sync + 'static,
    ) -> Self {
        FnMap {
            dim_in,
            dim_out,
            label: None,
            f: Box::new(f),
        }
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn handle(self) -> SmoothMapHandle {
        Arc::new(self)
    }
}

impl SmoothMap for FnMap {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.dim_out
    }
    fn eval(&self, x: &[Jet]) -> Result<Vec<Jet>, JetError> {
        if x.len() != self.dim_in {
            return Err(JetError::Arity {
                expected: self.dim_in,
                got: x.len(),
            });
        }
        let out = (self.f)(x)?;
        if out.len() != self.dim_out {
            return Err(JetError::Arity {
                expected: self.dim_out,
                got: out.len(),
            });
        }
        Ok(out)
    }
    fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }
}

/// Infallible closure map, the common case.
pub fn smooth_map(
    dim_in: usize,
    dim_out: usize,
    label: &str,
    f: impl Fn(&[Jet]) -> Vec<Jet> + Send + Sync + 'static,
) -> SmoothMapHandle {
    FnMap::new(dim_in, dim_out, move |x| Ok(f(x)))
        .labeled(label)
        .handle()
}

struct Selected {
    inner: SmoothMapHandle,
    pick: Vec<usize>,
    label: String,
}

impl SmoothMap for Selected {
    fn dim_in(&self) -> usize {
        self.inner.dim_in()
    }
    fn dim_out(&self) -> usize {
        self.pick.len()
    }
    fn eval(&self, x: &[Jet]) -> Result<Vec<Jet>, JetError> {
        let out = self.inner.eval(x)?;
        Ok(self.pick.iter().map(|&i| out[i].clone()).collect())
    }
    fn label(&self) -> Option<&str> {
        Some(&self.label)
    }
}

/// Keeps the listed output components of `f`, in the given order.
pub fn select_outputs(f: &SmoothMapHandle, pick: Vec<usize>, label: &str) -> SmoothMapHandle {
    Arc::new(Selected {
        inner: f.clone(),
        pick,
        label: label.to_string(),
    })
}

struct Precomposed {
    inner: SmoothMapHandle,
    /// Row-major `dim_in(inner) × dim` matrix.
    matrix: Vec<Vec<f64>>,
    offset: Vec<f64>,
    label: String,
}

impl SmoothMap for Precomposed {
    fn dim_in(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }
    fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }
    fn eval(&self, q: &[Jet]) -> Result<Vec<Jet>, JetError> {
        let p: Vec<Jet> = self
            .matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, &b)| {
                row.iter()
                    .zip(q)
                    .fold(q[0].lift(b), |acc, (&a, qj)| acc + qj * a)
            })
            .collect();
        self.inner.eval(&p)
    }
    fn label(&self) -> Option<&str> {
        Some(&self.label)
    }
}

/// `q ↦ f(A q + b)`.
pub fn precompose_affine(
    f: &SmoothMapHandle,
    matrix: Vec<Vec<f64>>,
    offset: Vec<f64>,
) -> SmoothMapHandle {
    assert_eq!(
        matrix.len(),
        f.dim_in(),
        "affine map rows must match the inner domain"
    );
    let label = format!("{}∘affine", f.label().unwrap_or("map"));
    Arc::new(Precomposed {
        inner: f.clone(),
        matrix,
        offset,
        label,
    })
}

/// Jets of every component of `f` at `x`, up to `order ≤ MAX_ORDER`.
pub fn jet_of_map(f: &dyn SmoothMap, x: &[f64], order: usize) -> Result<Vec<Jet>, JetError> {
    if order > MAX_ORDER {
        return Err(JetError::UnsupportedOrder {
            order,
            max: MAX_ORDER,
        });
    }
    jet_of_map_any(f, x, order)
}

/// As [`jet_of_map`] without the order cap; internal callers use order 5 for
/// third derivatives of Jacobian determinants of phase gradients.
pub fn jet_of_map_any(f: &dyn SmoothMap, x: &[f64], order: usize) -> Result<Vec<Jet>, JetError> {
    if x.len() != f.dim_in() {
        return Err(JetError::Arity {
            expected: f.dim_in(),
            got: x.len(),
        });
    }
    f.eval(&Jet::variables(x, order))
}

/// Plain evaluation.
pub fn eval_point(f: &dyn SmoothMap, x: &[f64]) -> Result<Vec<f64>, JetError> {
    if x.len() != f.dim_in() {
        return Err(JetError::Arity {
            expected: f.dim_in(),
            got: x.len(),
        });
    }
    Ok(f.eval(&Jet::plain(x))?.iter().map(Jet::value).collect())
}

/// Jacobian matrix (rows = outputs) at `x`.
pub fn jacobian(f: &dyn SmoothMap, x: &[f64]) -> Result<Vec<Vec<f64>>, JetError> {
    Ok(jet_of_map_any(f, x, 1)?.iter().map(Jet::gradient).collect())
}

/// Largest relative gap `|jet − FD| / (1 + |jet|)` over all partials of order
/// `1..=order`. Order `k` is checked by central differences of the jets of
/// order `k − 1` at the neighbouring points `x ± h e_i`.
pub fn finite_diff_check(f: &dyn SmoothMap, x: &[f64], order: usize, h: Option<f64>) -> f64 {
    let base = match jet_of_map_any(f, x, order) {
        Ok(j) => j,
        Err(_) => return f64::INFINITY,
    };
    let n = x.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let step = h.unwrap_or_else(|| f64::EPSILON.cbrt() * (1.0 + x[i].abs()));
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += step;
        xm[i] -= step;
        let lower = order.saturating_sub(1);
        let (jp, jm) = match (jet_of_map_any(f, &xp, lower), jet_of_map_any(f, &xm, lower)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return f64::INFINITY,
        };
        for (comp, full) in base.iter().enumerate() {
            let layout = jp[comp].layout().clone();
            for m in 0..layout.len() {
                let e = layout.exponents(m);
                let mut idx: Vec<usize> = Vec::new();
                for (v, &k) in e.iter().enumerate() {
                    idx.extend(std::iter::repeat_n(v, k as usize));
                }
                let fd = (jp[comp].derivative(&idx) - jm[comp].derivative(&idx)) / (2.0 * step);
                idx.push(i);
                let exact = full.derivative(&idx);
                worst = worst.max((exact - fd).abs() / (1.0 + exact.abs()));
            }
        }
    }
    worst
}

struct GradientPlan {
    /// Position of each small-layout monomial inside the big layout.
    embed: Vec<usize>,
    /// `extract[j][m]`: big index of `m · ε_j` for small monomial `m`.
    extract: Vec<Vec<usize>>,
    big: Arc<Layout>,
}

fn gradient_plan(d: usize, m: usize, order: usize) -> Arc<GradientPlan> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize, usize), Arc<GradientPlan>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache
        .lock()
        .expect("plan cache poisoned")
        .get(&(d, m, order))
    {
        return p.clone();
    }
    let small = Layout::get(d, order);
    let big = Layout::get(d + m, order + 1);
    let mut buf = vec![0u8; d + m];
    let mut embed = Vec::with_capacity(small.len());
    for s in 0..small.len() {
        buf.iter_mut().for_each(|b| *b = 0);
        buf[..d].copy_from_slice(small.exponents(s));
        embed.push(big.index_of(&buf).expect("embedded monomial"));
    }
    let mut extract = Vec::with_capacity(m);
    for j in 0..m {
        let mut col = Vec::with_capacity(small.len());
        for s in 0..small.len() {
            buf.iter_mut().for_each(|b| *b = 0);
            buf[..d].copy_from_slice(small.exponents(s));
            buf[d + j] = 1;
            col.push(big.index_of(&buf).expect("gradient monomial"));
        }
        extract.push(col);
    }
    let plan = Arc::new(GradientPlan {
        embed,
        extract,
        big,
    });
    cache
        .lock()
        .expect("plan cache poisoned")
        .entry((d, m, order))
        .or_insert(plan)
        .clone()
}

/// Values and full gradients `∂_j f_k` of `f` composed with the jets `q`,
/// all returned in the layout of `q`.
///
/// `f` is evaluated once at `q + ε` in a layout extended by one variable per
/// input and one order; the `ε`-linear part carries the gradient.
pub fn eval_with_gradient(
    f: &dyn SmoothMap,
    q: &[Jet],
) -> Result<(Vec<Jet>, Vec<Vec<Jet>>), JetError> {
    let m = f.dim_in();
    if q.len() != m {
        return Err(JetError::Arity {
            expected: m,
            got: q.len(),
        });
    }
    let small = q
        .first()
        .map(|j| j.layout().clone())
        .unwrap_or_else(|| Layout::get(0, 0));
    let d = small.dim();
    let order = small.order();
    let plan = gradient_plan(d, m, order);
    let inputs: Vec<Jet> = q
        .iter()
        .enumerate()
        .map(|(j, qj)| {
            let mut c = vec![0.0; plan.big.len()];
            for (s, &pos) in plan.embed.iter().enumerate() {
                c[pos] = qj.coeffs[s];
            }
            c[plan.extract[j][0]] += 1.0;
            Jet {
                layout: plan.big.clone(),
                coeffs: c,
            }
        })
        .collect();
    let out = f.eval(&inputs)?;
    let mut values = Vec::with_capacity(out.len());
    let mut grads = Vec::with_capacity(out.len());
    for o in &out {
        let take = |idx: &[usize]| -> Jet {
            let coeffs = idx
                .iter()
                .map(|&i| o.coeffs.get(i).copied().unwrap_or(0.0))
                .collect();
            Jet {
                layout: small.clone(),
                coeffs,
            }
        };
        values.push(take(&plan.embed));
        grads.push(plan.extract.iter().map(|col| take(col)).collect());
    }
    Ok((values, grads))
}

/// Determinant of a square matrix of jets.
///
/// Gaussian elimination with full pivoting on values; when an intermediate
/// pivot is numerically zero the division-free Berkowitz recursion is used.
pub fn det(matrix: &[Vec<Jet>]) -> Jet {
    let n = matrix.len();
    assert!(
        n > 0 && matrix.iter().all(|r| r.len() == n),
        "det needs a nonempty square matrix"
    );
    let scale = matrix
        .iter()
        .flatten()
        .map(|j| j.value().abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut a: Vec<Vec<Jet>> = matrix.to_vec();
    let mut sign = 1.0;
    let mut acc: Option<Jet> = None;
    for k in 0..n {
        let (mut pr, mut pc, mut best) = (k, k, -1.0);
        for (r, row) in a.iter().enumerate().skip(k) {
            for (c, x) in row.iter().enumerate().skip(k) {
                if x.value().abs() > best {
                    best = x.value().abs();
                    pr = r;
                    pc = c;
                }
            }
        }
        if k + 1 < n && best <= 1e-13 * scale {
            return berkowitz_det(matrix);
        }
        if pr != k {
            a.swap(pr, k);
            sign = -sign;
        }
        if pc != k {
            for row in a.iter_mut() {
                row.swap(pc, k);
            }
            sign = -sign;
        }
        let pivot = a[k][k].clone();
        acc = Some(match acc {
            Some(p) => p * &pivot,
            None => pivot.clone(),
        });
        if k + 1 == n {
            break;
        }
        let inv = pivot.recip();
        for r in k + 1..n {
            let factor = &a[r][k] * &inv;
            for c in k + 1..n {
                let upd = &a[r][c] - &(&factor * &a[k][c]);
                a[r][c] = upd;
            }
        }
    }
    acc.expect("n > 0") * sign
}

/// Division-free determinant (Berkowitz), robust at singular values.
pub fn berkowitz_det(matrix: &[Vec<Jet>]) -> Jet {
    let n = matrix.len();
    let zero = matrix[0][0].lift(0.0);
    let one = matrix[0][0].lift(1.0);
    // Characteristic polynomial coefficients of the leading r×r block, built up.
    let mut poly: Vec<Jet> = vec![one.clone(), -&matrix[0][0]];
    for r in 1..n {
        let a_rr = &matrix[r][r];
        let row: Vec<&Jet> = (0..r).map(|c| &matrix[r][c]).collect();
        let col: Vec<&Jet> = (0..r).map(|c| &matrix[c][r]).collect();
        // Toeplitz column: 1, −a_rr, −R C, −R A C, −R A² C, ...
        let mut t = vec![one.clone(), -a_rr];
        let mut v: Vec<Jet> = col.iter().map(|&c| c.clone()).collect();
        for _ in 0..r {
            let rv = row
                .iter()
                .zip(&v)
                .fold(zero.clone(), |s, (a, b)| s + *a * b);
            t.push(-rv);
            let next: Vec<Jet> = (0..r)
                .map(|i| (0..r).fold(zero.clone(), |s, j| s + &matrix[i][j] * &v[j]))
                .collect();
            v = next;
        }
        let mut np = Vec::with_capacity(r + 2);
        for i in 0..r + 2 {
            let mut s = zero.clone();
            for j in 0..=i.min(r) {
                if i - j < t.len() {
                    s += &t[i - j] * &poly[j];
                }
            }
            np.push(s);
        }
        poly = np;
    }
    let last = poly.pop().expect("nonempty");
    if n % 2 == 0 {
        last
    } else {
        -last
    }
}

/// Plain-float determinant helper used for cheap checks.
pub fn det_f64(matrix: &[Vec<f64>]) -> f64 {
    let n = matrix.len();
    nalgebra::DMatrix::from_fn(n, n, |i, j| matrix[i][j]).determinant()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn poly_t4() -> SmoothMapHandle {
        smooth_map(1, 1, "t^4", |x| vec![x[0].powi(4)])
    }

    #[test]
    fn quartic_derivatives() {
        let j = jet_of_map(poly_t4().as_ref(), &[1.0], 4).unwrap();
        let d: Vec<f64> = (1..=4).map(|k| j[0].derivative(&vec![0; k])).collect();
        assert_eq!(d, vec![4.0, 12.0, 24.0, 24.0]);
    }

    #[test]
    fn constant_has_zero_tensors() {
        let f = smooth_map(3, 1, "const", |x| vec![x[0].lift(2.5)]);
        let j = jet_of_map(f.as_ref(), &[0.3, -1.0, 4.0], 4).unwrap();
        for k in 1..=4 {
            assert!(j[0].tensor(k).iter().all(|&v| v == 0.0));
        }
        assert_eq!(
            finite_diff_check(f.as_ref(), &[0.3, -1.0, 4.0], 3, None),
            0.0
        );
    }

    #[test]
    fn sine_series() {
        let f = smooth_map(1, 1, "sin", |x| vec![x[0].sin()]);
        let j = jet_of_map(f.as_ref(), &[0.0], 3).unwrap();
        let d: Vec<f64> = (1..=3).map(|k| j[0].derivative(&vec![0; k])).collect();
        assert!((d[0] - 1.0).abs() < 1e-15 && d[1].abs() < 1e-15 && (d[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn order_cap_is_enforced() {
        assert!(matches!(
            jet_of_map(poly_t4().as_ref(), &[1.0], 5),
            Err(JetError::UnsupportedOrder { .. })
        ));
    }

    #[test]
    fn finite_difference_examples() {
        let cube = smooth_map(1, 1, "t^3", |x| vec![x[0].powi(3)]);
        assert!(finite_diff_check(cube.as_ref(), &[0.5], 3, Some(1e-3)) < 1e-5);
        let exp = smooth_map(1, 1, "exp", |x| vec![x[0].exp()]);
        assert!(finite_diff_check(exp.as_ref(), &[0.0], 2, Some(1e-4)) < 1e-6);
    }

    #[test]
    fn tensors_are_symmetric() {
        let f = smooth_map(3, 1, "mix", |x| {
            vec![(&x[0] * &x[1]).sin() * x[2].exp() + x[1].powi(3) * &x[2]]
        });
        let j = jet_of_map(f.as_ref(), &[0.2, -0.4, 0.7], 3).unwrap();
        let t = j[0].tensor(3);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let v = t[a * 9 + b * 3 + c];
                    assert_eq!(v, t[b * 9 + c * 3 + a]);
                    assert_eq!(v, t[c * 9 + a * 3 + b]);
                }
            }
        }
    }

    #[test]
    fn univariate_functions_match_closed_forms() {
        let x = Jet::variables(&[0.7], 4);
        let checks: Vec<(Jet, [f64; 5])> = vec![
            (
                x[0].ln(),
                [
                    0.7f64.ln(),
                    1.0 / 0.7,
                    -1.0 / 0.49,
                    2.0 / 0.343,
                    -6.0 / 0.2401,
                ],
            ),
            (
                x[0].recip(),
                [
                    1.0 / 0.7,
                    -1.0 / 0.49,
                    2.0 / 0.343,
                    -6.0 / 0.2401,
                    24.0 / 0.16807,
                ],
            ),
            (
                x[0].sqrt(),
                [
                    0.7f64.sqrt(),
                    0.5 * 0.7f64.powf(-0.5),
                    -0.25 * 0.7f64.powf(-1.5),
                    0.375 * 0.7f64.powf(-2.5),
                    -0.9375 * 0.7f64.powf(-3.5),
                ],
            ),
            (
                x[0].cos(),
                [
                    0.7f64.cos(),
                    -0.7f64.sin(),
                    -0.7f64.cos(),
                    0.7f64.sin(),
                    0.7f64.cos(),
                ],
            ),
        ];
        for (j, expect) in checks {
            for (k, e) in expect.iter().enumerate() {
                let got = j.derivative(&vec![0; k]);
                assert!(
                    (got - e).abs() < 1e-12 * (1.0 + e.abs()),
                    "k={k} got {got} want {e}"
                );
            }
        }
    }

    #[test]
    fn partial_and_integrate_invert() {
        let x = Jet::variables(&[0.3, 0.9], 4);
        let f = &x[0].powi(3) * &x[1] + x[1].sin();
        let g = f.partial(0).integrate(0);
        let p = Jet::variables(&[0.3, 0.9], 3);
        let base = &p[0].powi(3) * &p[1];
        let want = &base - &(0.027 * &p[1]);
        for (a, b) in g.truncate(3).coeffs().iter().zip(want.coeffs()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn composition_matches_direct_evaluation() {
        // outer g(u, v) = u² v + sin u, expanded at (g_u0, g_v0)
        let inner_vars = Jet::variables(&[0.4, -0.2], 3);
        let u = &inner_vars[0] * &inner_vars[1] + 1.0;
        let v = inner_vars[0].exp();
        let direct = &u * &u * &v + u.sin();
        let local = Jet::variables(&[u.value(), v.value()], 3);
        let outer = &local[0] * &local[0] * &local[1] + local[0].sin();
        let composed = outer.compose(&[u, v]);
        for (a, b) in composed.coeffs().iter().zip(direct.coeffs()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_extraction_matches_direct_partials() {
        let f = smooth_map(2, 1, "f", |x| {
            vec![&x[0].powi(3) * &x[1].exp() + &x[0] * &x[1]]
        });
        let q = Jet::variables(&[0.5, -0.3], 3);
        let (vals, grads) = eval_with_gradient(f.as_ref(), &q).unwrap();
        let direct = f.eval(&Jet::variables(&[0.5, -0.3], 4)).unwrap();
        for (a, b) in vals[0].coeffs().iter().zip(direct[0].truncate(3).coeffs()) {
            assert!((a - b).abs() < 1e-13);
        }
        for j in 0..2 {
            let want = direct[0].partial(j);
            for (a, b) in grads[0][j].coeffs().iter().zip(want.coeffs()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn determinant_routes_agree_at_singular_values() {
        let x = Jet::variables(&[0.0, 0.0, 0.0], 3);
        // corank two at the origin
        let m = vec![
            vec![x[0].clone(), x[1].clone(), x[0].lift(0.0)],
            vec![x[1].clone(), x[2].clone(), x[0].lift(0.0)],
            vec![x[0].lift(0.0), x[0].lift(0.0), x[0].lift(2.0)],
        ];
        let d = det(&m);
        let want = (&x[0] * &x[2] - &x[1] * &x[1]) * 2.0;
        for (a, b) in d.coeffs().iter().zip(want.coeffs()) {
            assert!((a - b).abs() < 1e-14);
        }
        let y = Jet::variables(&[0.3, -0.8, 1.1], 2);
        let m2: Vec<Vec<Jet>> = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| (&y[(i + j) % 3] * (1.0 + i as f64)).sin() + (i * j) as f64)
                    .collect()
            })
            .collect();
        let g = det(&m2);
        let b = berkowitz_det(&m2);
        for (p, q) in g.coeffs().iter().zip(b.coeffs()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    fn monomial_value_and_derivative(coef: f64, e: &[u8], x: &[f64], idx: &[usize]) -> f64 {
        let mut e = e.to_vec();
        let mut c = coef;
        for &i in idx {
            if e[i] == 0 {
                return 0.0;
            }
            c *= e[i] as f64;
            e[i] -= 1;
        }
        e.iter()
            .zip(x)
            .fold(c, |acc, (&k, &xi)| acc * xi.powi(k as i32))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn random_polynomials_are_exact(
            dim in 1usize..=8,
            terms in proptest::collection::vec((-2.0f64..2.0, proptest::collection::vec(0u8..=4, 8)), 1..8),
            point in proptest::collection::vec(-1.5f64..1.5, 8),
        ) {
            // keep total degree ≤ 4 by greedy clipping
            let terms: Vec<(f64, Vec<u8>)> = terms.into_iter().map(|(c, mut e)| {
                e.truncate(dim);
                let mut budget = 4u8;
                for k in e.iter_mut() {
                    *k = (*k).min(budget);
                    budget -= *k;
                }
                (c, e)
            }).collect();
            let tt = terms.clone();
            let f = smooth_map(dim, 1, "poly", move |x| {
                let mut acc = x[0].lift(0.0);
                for (c, e) in &tt {
                    let mut m = x[0].lift(*c);
                    for (v, &k) in e.iter().enumerate() {
                        m = m * x[v].powi(k as u32);
                    }
                    acc += m;
                }
                vec![acc]
            });
            let x = &point[..dim];
            let j = jet_of_map(f.as_ref(), x, 4).unwrap();
            let layout = j[0].layout().clone();
            for m in 0..layout.len() {
                let mut idx = Vec::new();
                for (v, &k) in layout.exponents(m).iter().enumerate() {
                    idx.extend(std::iter::repeat_n(v, k as usize));
                }
                let want: f64 = terms.iter().map(|(c, e)| monomial_value_and_derivative(*c, e, x, &idx)).sum();
                let got = j[0].derivative(&idx);
                prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()), "{idx:?}: {got} vs {want}");
            }
        }

        #[test]
        fn leibniz_rule_holds(a in -1.0f64..1.0, b in -1.0f64..1.0, c in 0.1f64..2.0) {
            let x = Jet::variables(&[a, b, c], 4);
            let f = (&x[0] * &x[1]).sin() + &x[2];
            let g = x[2].ln() * &x[0];
            let prod = &f * &g;
            // first and second order Leibniz on coefficients via derivatives
            for i in 0..3 {
                let want = f.derivative(&[i]) * g.value() + f.value() * g.derivative(&[i]);
                prop_assert!((prod.derivative(&[i]) - want).abs() < 1e-12);
                for j in 0..3 {
                    let want2 = f.derivative(&[i, j]) * g.value()
                        + f.derivative(&[i]) * g.derivative(&[j])
                        + f.derivative(&[j]) * g.derivative(&[i])
                        + f.value() * g.derivative(&[i, j]);
                    prop_assert!((prod.derivative(&[i, j]) - want2).abs() < 1e-11);
                }
            }
        }
    }
}
