use std::borrow::Cow;

use super::kernels;
use super::{Real, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        a_shared: bool,
        b_shared: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    /// `b`'s shape is a suffix of `a`'s; `b` is broadcast over the leading axes.
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Relu {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    MaskFill {
        x: Var,
        keep: Vec<bool>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<T>,
        count: usize,
    },
    Sum {
        x: Var,
    },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Operation tape for reverse-mode differentiation.
///
/// Nodes are appended in creation order, which is a topological order of the
/// computation; [`Graph::backward`] walks it in reverse and visits each node
/// once. Parameters can be recorded by reference ([`Graph::borrowed`]) so the
/// tape never copies model weights.
pub struct Graph<'a, T: Real = f32> {
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Real> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), requires_grad, op)
    }

    /// Records a trainable input owned by the graph.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), true, Op::Leaf)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), false, Op::Leaf)
    }

    /// Records a borrowed tensor (typically a model parameter).
    pub fn borrowed(&mut self, value: &'a Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient accumulated by the last [`Graph::backward`], if the node was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Batched matrix product over the last two axes.
    ///
    /// Leading axes must be equal, or one side must be a plain matrix that is
    /// shared across the other side's batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (la, lb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (lead, a_shared, b_shared) = if la == lb {
            (la.to_vec(), false, false)
        } else if lb.is_empty() {
            (la.to_vec(), false, true)
        } else if la.is_empty() {
            (lb.to_vec(), true, false)
        } else {
            return Err(mismatch());
        };
        let batch: usize = lead.iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (da, db) = (self.data(a), self.data(b));
            for i in 0..batch {
                let ai = if a_shared { 0 } else { i };
                let bi = if b_shared { 0 } else { i };
                kernels::gemm(
                    &da[ai * m * k..(ai + 1) * m * k],
                    &db[bi * k * n..(bi + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = lead;
        shape.extend([m, n]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(
            value,
            &[a, b],
            Op::MatMul {
                a,
                b,
                batch,
                a_shared,
                b_shared,
                m,
                k,
                n,
            },
        ))
    }

    /// Elementwise sum; `b` may have a shape equal to a suffix of `a`'s and is
    /// then broadcast over the leading axes (biases, positional tables).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Shape {
                op: "add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let bd = self.data(b);
        let n = bd.len();
        let out: Vec<T> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % n])
            .collect();
        let value = Tensor::new(sa.to_vec(), out)?;
        Ok(self.push_op(value, &[a, b], Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push_op(value, &[a, b], Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.data(x).iter().map(|&v| v * factor).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out).expect("same shape");
        self.push_op(value, &[x], Op::Scale { x, factor })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out).expect("same shape");
        self.push_op(value, &[x], Op::Relu { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?.with_requires_grad(false);
        Ok(self.push_op(value, &[x], Op::Reshape { x }))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Shape {
                op: "permute",
                lhs: shape,
                rhs: perm.to_vec(),
            });
        }
        let mut out = vec![T::zero(); self.data(x).len()];
        kernels::permute(self.data(x), &shape, perm, &mut out);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push_op(
            value,
            &[x],
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Replaces entries where `keep` is false by −∞. `keep` has one flag per
    /// element of `x`; forbidden entries pass no gradient.
    pub fn mask_fill(&mut self, x: Var, keep: Vec<bool>) -> Result<Var> {
        if keep.len() != self.data(x).len() {
            return Err(Error::Shape {
                op: "mask_fill",
                lhs: self.shape(x).to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let out = self
            .data(x)
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v } else { T::neg_infinity() })
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push_op(value, &[x], Op::MaskFill { x, keep }))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Index {
                what: "softmax axis",
                index: axis,
                bound: shape.len(),
            });
        }
        let mut out = vec![T::zero(); self.data(x).len()];
        kernels::softmax(self.data(x), &shape, axis, &mut out);
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, &[x], Op::Softmax { x, axis }))
    }

    /// Normalises over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::contract("layer_norm on a scalar"))?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let mut out = vec![T::zero(); self.data(x).len()];
        let (xhat, inv_std) = kernels::layer_norm(
            self.data(x),
            self.data(gain),
            self.data(bias),
            d,
            eps,
            &mut out,
        );
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(
            value,
            &[x, gain, bias],
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Gathers rows of a `V×d` table; output shape is `ids_shape × d`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::Shape {
                op: "embedding",
                lhs: ts,
                rhs: ids_shape.to_vec(),
            });
        }
        let (vocab, d) = (ts[0], ts[1]);
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    what: "token id",
                    index: id,
                    bound: vocab,
                });
            }
            out.extend_from_slice(&td[id * d..(id + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(
            value,
            &[table],
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood over positions where `mask` is true.
    ///
    /// `logits` has shape `[..., V]` and one target per leading position. A
    /// fully masked input yields 0 with zero gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let v = *shape
            .last()
            .ok_or_else(|| Error::contract("cross_entropy on a scalar"))?;
        let positions = self.data(logits).len() / v;
        if targets.len() != positions || mask.len() != positions {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len(), mask.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index {
                what: "target id",
                index: bad,
                bound: v,
            });
        }
        let mut probs = vec![T::zero(); positions * v];
        kernels::softmax(self.data(logits), &[positions, v], 1, &mut probs);
        let count = mask.iter().filter(|&&m| m).count();
        let ld = self.data(logits);
        let mut total = T::zero();
        for p in (0..positions).filter(|&p| mask[p]) {
            let row = &ld[p * v..(p + 1) * v];
            let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            total += lse - row[targets[p]];
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::lit(count as f64)
        };
        Ok(self.push_op(
            Tensor::scalar(loss),
            &[logits],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        self.push_op(Tensor::scalar(s), &[x], Op::Sum { x })
    }

    /// Reverse sweep from a one-element `loss`. Gradients of earlier sweeps
    /// are discarded; fan-out contributions are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (var, dv) in contributions {
                let node = &mut self.nodes[var.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&dv).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(dv),
                }
            }
        }
        Ok(())
    }

    fn zeros_like(&self, v: Var) -> Vec<T> {
        vec![T::zero(); self.data(v).len()]
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, idx: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => Vec::new(),
            &Op::MatMul {
                a,
                b,
                batch,
                a_shared,
                b_shared,
                m,
                k,
                n,
            } => {
                let (ad, bd) = (self.data(a), self.data(b));
                let mut out = Vec::with_capacity(2);
                if self.wants(a) {
                    let mut da = self.zeros_like(a);
                    for i in 0..batch {
                        let ai = if a_shared { 0 } else { i };
                        let bi = if b_shared { 0 } else { i };
                        kernels::gemm_nt(
                            &g[i * m * n..(i + 1) * m * n],
                            &bd[bi * k * n..(bi + 1) * k * n],
                            &mut da[ai * m * k..(ai + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    out.push((a, da));
                }
                if self.wants(b) {
                    let mut db = self.zeros_like(b);
                    for i in 0..batch {
                        let ai = if a_shared { 0 } else { i };
                        let bi = if b_shared { 0 } else { i };
                        kernels::gemm_tn(
                            &ad[ai * m * k..(ai + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut db[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    out.push((b, db));
                }
                out
            }
            &Op::Add { a, b } => {
                let mut out = vec![(a, g.to_vec())];
                if self.wants(b) {
                    let mut db = self.zeros_like(b);
                    let n = db.len();
                    for (i, &gi) in g.iter().enumerate() {
                        db[i % n] += gi;
                    }
                    out.push((b, db));
                }
                out
            }
            &Op::Mul { a, b } => {
                let (ad, bd) = (self.data(a), self.data(b));
                vec![
                    (a, g.iter().zip(bd).map(|(&x, &y)| x * y).collect()),
                    (b, g.iter().zip(ad).map(|(&x, &y)| x * y).collect()),
                ]
            }
            &Op::Scale { x, factor } => vec![(x, g.iter().map(|&v| v * factor).collect())],
            &Op::Relu { x } => {
                let xd = self.data(x);
                vec![(
                    x,
                    g.iter()
                        .zip(xd)
                        .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect(),
                )]
            }
            &Op::Reshape { x } => vec![(x, g.to_vec())],
            Op::Permute { x, perm } => {
                let mut dx = self.zeros_like(*x);
                kernels::permute_map(self.shape(*x), perm, |src, dst| dx[src] += g[dst]);
                vec![(*x, dx)]
            }
            Op::MaskFill { x, keep } => vec![(
                *x,
                g.iter()
                    .zip(keep)
                    .map(|(&gi, &k)| if k { gi } else { T::zero() })
                    .collect(),
            )],
            &Op::Softmax { x, axis } => {
                let mut dx = self.zeros_like(x);
                kernels::softmax_backward(node.value.data(), g, node.value.shape(), axis, &mut dx);
                vec![(x, dx)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.data(*gain).len();
                let gd = self.data(*gain);
                let width = T::lit(d as f64);
                let mut dx = self.zeros_like(*x);
                let mut dgain = vec![T::zero(); d];
                let mut dbias = vec![T::zero(); d];
                for (r, &inv) in inv_std.iter().enumerate() {
                    let rows = r * d..(r + 1) * d;
                    let (gr, hr) = (&g[rows.clone()], &xhat[rows]);
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gd[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gd[j];
                        dx[r * d + j] = inv / width * (width * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                vec![(*x, dx), (*gain, dgain), (*bias, dbias)]
            }
            Op::Embedding { table, ids } => {
                let mut dt = self.zeros_like(*table);
                let d = self.shape(*table)[1];
                for (p, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[p * d + j];
                    }
                }
                vec![(*table, dt)]
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let mut dl = self.zeros_like(*logits);
                if *count > 0 {
                    let v = probs.len() / targets.len();
                    let scale = g[0] / T::lit(*count as f64);
                    for (p, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        for j in 0..v {
                            dl[p * v + j] = probs[p * v + j] * scale;
                        }
                        dl[p * v + t] -= scale;
                    }
                }
                vec![(*logits, dl)]
            }
            &Op::Sum { x } => vec![(x, vec![g[0]; self.data(x).len()])],
        }
    }
}
