//! A small define-by-run reverse-mode differentiation engine over dense
//! `f64` vectors and matrices, plus a central-difference gradient checker.
//!
//! A [`Tape`] records primitive operations as they execute. Parameters enter
//! the tape through [`Tape::param`]; [`Tape::backward`] walks the record in
//! reverse and accumulates gradients into the [`ParameterSet`] buffers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }
}

/// Dense row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor::vector(vec![x])
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "matrix",
                detail: format!(
                    "{rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        Ok(Tensor {
            shape: Shape::Matrix(rows, cols),
            data,
        })
    }

    pub fn zeros(shape: Shape) -> Tensor {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a length-1 tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    #[serde(skip_serializing, default = "empty_grad")]
    pub grad: Tensor,
    pub trainable: bool,
}

fn empty_grad() -> Tensor {
    Tensor::vector(Vec::new())
}

/// Named tensors with gradient buffers of identical shape.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    entries: Vec<Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Parameter {
            name: name.into(),
            value,
            grad,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            if p.grad.shape() != p.value.shape() {
                p.grad = Tensor::zeros(p.value.shape());
            } else {
                p.grad.data.iter_mut().for_each(|g| *g = 0.0);
            }
        }
    }

    /// Euclidean norm of all trainable gradients taken together.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }
}

/// Handle to a value recorded on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatVec(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Concat(Vec<usize>),
    Tanh(usize),
    Sigmoid(usize),
    SquaredDistance(usize, usize),
    Sum(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Record of primitive operations in execution order.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Trace(format!(
                "value {} of tape {} used on tape {}",
                v.idx, v.tape, self.id
            )));
        }
        Ok(v.idx)
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(op.to_string()));
        }
        let requires_grad = match &kind {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatVec(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::SquaredDistance(a, b) => {
                self.nodes[*a].requires_grad || self.nodes[*b].requires_grad
            }
            Op::Scale(a, _) | Op::Tanh(a) | Op::Sigmoid(a) => self.nodes[*a].requires_grad,
            Op::Concat(xs) | Op::Sum(xs) => xs.iter().any(|&x| self.nodes[x].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    /// A value with no gradient path.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push("constant", t, Op::Constant)
    }

    /// Records `id`'s current value; repeated calls reuse the same node.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Result<Var> {
        if let Some(&idx) = self.params.get(&id) {
            return Ok(Var { tape: self.id, idx });
        }
        let p = params.get(id);
        let v = if p.trainable {
            self.push("param", p.value.clone(), Op::Param(id))?
        } else {
            self.constant(p.value.clone())?
        };
        self.params.insert(id, v.idx);
        Ok(v)
    }

    /// Same value as `v`, cut off from its gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.value(v)?.clone();
        self.constant(t)
    }

    fn vec_len(&self, idx: usize, op: &'static str) -> Result<usize> {
        match self.nodes[idx].value.shape {
            Shape::Vector(n) => Ok(n),
            Shape::Matrix(r, c) => Err(dim_err(
                op,
                format!("expected a vector, got {r}x{c} matrix"),
            )),
        }
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mi, vi) = (self.idx(m)?, self.idx(v)?);
        let Shape::Matrix(rows, cols) = self.nodes[mi].value.shape else {
            return Err(dim_err("matvec", "left operand is not a matrix".into()));
        };
        let n = self.vec_len(vi, "matvec")?;
        if n != cols {
            return Err(dim_err(
                "matvec",
                format!("{rows}x{cols} matrix times length-{n} vector"),
            ));
        }
        let md = &self.nodes[mi].value.data;
        let vd = &self.nodes[vi].value.data;
        let out: Vec<f64> = md
            .chunks_exact(cols.max(1))
            .take(rows)
            .map(|row| row.iter().zip(vd).map(|(a, b)| a * b).sum())
            .collect();
        let out = if cols == 0 { vec![0.0; rows] } else { out };
        self.push("matvec", Tensor::vector(out), Op::MatVec(mi, vi))
    }

    fn same_shape(&self, a: usize, b: usize, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape, self.nodes[b].value.shape);
        if sa != sb {
            return Err(dim_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(ai, bi, name)?;
        let va = &self.nodes[ai].value;
        let vb = &self.nodes[bi].value;
        let data = va
            .data
            .iter()
            .zip(&vb.data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor {
            shape: va.shape,
            data,
        };
        self.push(name, t, op(ai, bi))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "elementwise_mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ai = self.idx(a)?;
        let v = &self.nodes[ai].value;
        let t = Tensor {
            shape: v.shape,
            data: v.data.iter().map(|x| x * c).collect(),
        };
        self.push("scale", t, Op::Scale(ai, c))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut idxs = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let i = self.idx(p)?;
            self.vec_len(i, "concat")?;
            data.extend_from_slice(&self.nodes[i].value.data);
            idxs.push(i);
        }
        self.push("concat", Tensor::vector(data), Op::Concat(idxs))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let v = &self.nodes[ai].value;
        let t = Tensor {
            shape: v.shape,
            data: v.data.iter().map(|x| x.tanh()).collect(),
        };
        self.push("tanh", t, Op::Tanh(ai))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let v = &self.nodes[ai].value;
        let t = Tensor {
            shape: v.shape,
            data: v.data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect(),
        };
        self.push("sigmoid", t, Op::Sigmoid(ai))
    }

    /// `‖a − b‖²` as a length-1 tensor.
    pub fn squared_l2_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(ai, bi, "squared_l2_distance")?;
        let d: f64 = self.nodes[ai]
            .value
            .data
            .iter()
            .zip(&self.nodes[bi].value.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.push(
            "squared_l2_distance",
            Tensor::scalar(d),
            Op::SquaredDistance(ai, bi),
        )
    }

    /// Sum of length-1 tensors.
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let mut idxs = Vec::with_capacity(terms.len());
        let mut total = 0.0;
        for &t in terms {
            let i = self.idx(t)?;
            if self.nodes[i].value.len() != 1 {
                return Err(dim_err(
                    "sum",
                    format!(
                        "term of length {} is not a scalar",
                        self.nodes[i].value.len()
                    ),
                ));
            }
            total += self.nodes[i].value.data[0];
            idxs.push(i);
        }
        self.push("sum", Tensor::scalar(total), Op::Sum(idxs))
    }

    /// Accumulates `∂loss/∂p` into every recorded parameter's gradient buffer.
    /// Buffers are not reset, so repeated calls add up.
    pub fn backward(&self, loss: Var, params: &mut ParameterSet) -> Result<()> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(dim_err("backward", "loss is not a scalar".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
            grads[idx].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let needs = |j: usize| self.nodes[j].requires_grad;
            let len = |j: usize| self.nodes[j].value.len();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let p = params.get_mut(*id);
                    if p.grad.shape() != p.value.shape() {
                        p.grad = Tensor::zeros(p.value.shape());
                    }
                    if p.grad.len() != g.len() {
                        return Err(Error::Trace(format!(
                            "parameter {} changed shape since recording",
                            p.name
                        )));
                    }
                    p.grad.data.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::MatVec(m, v) => {
                    let Shape::Matrix(rows, cols) = self.nodes[*m].value.shape else {
                        unreachable!()
                    };
                    if needs(*m) {
                        let vd = &self.nodes[*v].value.data;
                        let gm = acc(&mut grads, *m, rows * cols);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            let row = &mut gm[r * cols..(r + 1) * cols];
                            for (x, vv) in row.iter_mut().zip(vd) {
                                *x += gr * vv;
                            }
                        }
                    }
                    if needs(*v) {
                        let md = &self.nodes[*m].value.data;
                        let gv = acc(&mut grads, *v, cols);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            for (x, mv) in gv.iter_mut().zip(&md[r * cols..(r + 1) * cols]) {
                                *x += gr * mv;
                            }
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) {
                        -1.0
                    } else {
                        1.0
                    };
                    if needs(*a) {
                        let ga = acc(&mut grads, *a, g.len());
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                    if needs(*b) {
                        let gb = acc(&mut grads, *b, g.len());
                        gb.iter_mut().zip(&g).for_each(|(x, y)| *x += sign * y);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let vb = &self.nodes[*b].value.data;
                        let ga = acc(&mut grads, *a, g.len());
                        for ((x, y), z) in ga.iter_mut().zip(&g).zip(vb) {
                            *x += y * z;
                        }
                    }
                    if needs(*b) {
                        let va = &self.nodes[*a].value.data;
                        let gb = acc(&mut grads, *b, g.len());
                        for ((x, y), z) in gb.iter_mut().zip(&g).zip(va) {
                            *x += y * z;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = len(p);
                        if needs(p) {
                            let gp = acc(&mut grads, p, n);
                            gp.iter_mut()
                                .zip(&g[offset..offset + n])
                                .for_each(|(x, y)| *x += y);
                        }
                        offset += n;
                    }
                }
                Op::Tanh(a) => {
                    let out = &node.value.data;
                    let ga = acc(&mut grads, *a, g.len());
                    for ((x, y), o) in ga.iter_mut().zip(&g).zip(out) {
                        *x += y * (1.0 - o * o);
                    }
                }
                Op::Sigmoid(a) => {
                    let out = &node.value.data;
                    let ga = acc(&mut grads, *a, g.len());
                    for ((x, y), o) in ga.iter_mut().zip(&g).zip(out) {
                        *x += y * o * (1.0 - o);
                    }
                }
                Op::SquaredDistance(a, b) => {
                    let g0 = g[0];
                    let va = &self.nodes[*a].value.data;
                    let vb = &self.nodes[*b].value.data;
                    let diff: Vec<f64> =
                        va.iter().zip(vb).map(|(x, y)| 2.0 * g0 * (x - y)).collect();
                    if needs(*a) {
                        let ga = acc(&mut grads, *a, diff.len());
                        ga.iter_mut().zip(&diff).for_each(|(x, y)| *x += y);
                    }
                    if needs(*b) {
                        let gb = acc(&mut grads, *b, diff.len());
                        gb.iter_mut().zip(&diff).for_each(|(x, y)| *x -= y);
                    }
                }
                Op::Sum(terms) => {
                    for &t in terms {
                        if needs(t) {
                            acc(&mut grads, t, 1)[0] += g[0];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences, returning `max |analytic − numeric| / max(1, |numeric|)`
/// over every trainable coordinate. Parameter values are restored on exit;
/// gradient buffers hold the analytic gradient.
pub fn finite_difference_check<F>(f: F, params: &mut ParameterSet, eps: f64) -> Result<f64>
where
    F: Fn(&ParameterSet, &mut Tape) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Argument(format!("eps must be positive, got {eps}")));
    }
    params.zero_grad();
    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    tape.backward(loss, params)?;

    let eval = |params: &ParameterSet| -> Result<f64> {
        let mut tape = Tape::new();
        let v = f(params, &mut tape)?;
        let x = tape.value(v)?.item();
        if !x.is_finite() {
            return Err(Error::Numeric("finite_difference_check objective".into()));
        }
        Ok(x)
    };

    let mut worst = 0.0_f64;
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        if !params.get(id).trainable {
            continue;
        }
        for k in 0..params.value(id).len() {
            let original = params.value(id).data[k];
            params.get_mut(id).value.data[k] = original + eps;
            let plus = eval(params);
            params.get_mut(id).value.data[k] = original - eps;
            let minus = eval(params);
            params.get_mut(id).value.data[k] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let analytic = params.grad(id).data[k];
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(values: Vec<f64>) -> (ParameterSet, ParamId) {
        let mut ps = ParameterSet::new();
        let id = ps.add("w", Tensor::vector(values), true);
        (ps, id)
    }

    #[test]
    fn squared_distance_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = t.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let d = t.squared_l2_distance(a, b).unwrap();
        assert_eq!(t.value(d).unwrap().item(), 0.0);

        let a = t.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let b = t.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
        let d = t.squared_l2_distance(a, b).unwrap();
        assert_eq!(t.value(d).unwrap().item(), 25.0);
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![0.0; 5])).unwrap();
        let y = t.tanh(z).unwrap();
        assert_eq!(t.value(y).unwrap().data(), &[0.0; 5]);
    }

    #[test]
    fn gradient_of_square() {
        let (mut ps, id) = one_param(vec![3.0]);
        let mut t = Tape::new();
        let w = t.param(&ps, id).unwrap();
        let zero = t.constant(Tensor::vector(vec![0.0])).unwrap();
        let loss = t.squared_l2_distance(w, zero).unwrap();
        t.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(id).data(), &[6.0]);

        // Accumulates without a reset.
        t.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(id).data(), &[12.0]);
        ps.zero_grad();
        assert_eq!(ps.grad(id).data(), &[0.0]);
    }

    #[test]
    fn unrelated_parameter_gets_zero_gradient() {
        let mut ps = ParameterSet::new();
        let a = ps.add("a", Tensor::vector(vec![1.0]), true);
        let b = ps.add("b", Tensor::vector(vec![2.0]), true);
        let mut t = Tape::new();
        let va = t.param(&ps, a).unwrap();
        let _vb = t.param(&ps, b).unwrap();
        let loss = t.squared_l2_distance(va, va).unwrap();
        t.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(b).data(), &[0.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = t.constant(Tensor::vector(vec![1.0])).unwrap();
        assert!(matches!(t.add(a, b), Err(Error::Dimension { .. })));
        let m = t
            .constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap())
            .unwrap();
        assert!(matches!(t.matvec(m, a), Err(Error::Dimension { .. })));
        assert!(matches!(t.matvec(a, a), Err(Error::Dimension { .. })));
    }

    #[test]
    fn foreign_variables_are_trace_errors() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = t1.constant(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(t2.tanh(a), Err(Error::Trace(_))));
        let (mut ps, _) = one_param(vec![1.0]);
        assert!(matches!(t2.backward(a, &mut ps), Err(Error::Trace(_))));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(1e300)).unwrap();
        assert!(matches!(t.scale(a, 1e300), Err(Error::Numeric(_))));
    }

    #[test]
    fn checker_on_quadratic_and_constant() {
        let (mut ps, id) = one_param(vec![1.0, 2.0, 3.0]);
        let err = finite_difference_check(
            |ps, t| {
                let w = t.param(ps, id)?;
                let z = t.constant(Tensor::vector(vec![0.0; 3]))?;
                t.squared_l2_distance(w, z)
            },
            &mut ps,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
        assert_eq!(ps.grad(id).data(), &[2.0, 4.0, 6.0]);

        let err =
            finite_difference_check(|_, t| t.constant(Tensor::scalar(4.0)), &mut ps, 1e-5).unwrap();
        assert_eq!(err, 0.0);
        assert!(
            finite_difference_check(|_, t| t.constant(Tensor::scalar(4.0)), &mut ps, 0.0).is_err()
        );
    }
}
