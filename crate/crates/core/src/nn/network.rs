use serde::{Deserialize, Serialize};

use super::layers::{self, BnTrainCache, ConvGeom, Dims};
use crate::arch::{ArchDescriptor, Node, ParamKind, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Running statistics in batch norm; nothing is updated.
    Eval,
}

/// An architecture's executable layer graph.
#[derive(Clone, Debug)]
pub struct Network {
    arch: ArchDescriptor,
    plan: Vec<Node>,
}

#[derive(Clone, Debug)]
enum NodeCache<T> {
    Flatten,
    Conv { input: Vec<T>, geom: ConvGeom },
    BnTrain(BnTrainCache<T>),
    BnEval { scale: Vec<T> },
    Relu { output: Vec<T> },
    MaxPool { arg: Vec<u32>, in_len: usize },
    Gap { dims: Dims },
    Dense { input: Vec<T> },
    Residual {
        main: Vec<(Dims, NodeCache<T>)>,
        shortcut: Vec<(Dims, NodeCache<T>)>,
        output: Vec<T>,
    },
}

/// Activations recorded by [`Network::forward`], consumed by
/// [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Cache<T = f32> {
    mode: Mode,
    input_shape: Vec<usize>,
    nodes: Vec<(Dims, NodeCache<T>)>,
}

impl<T> Cache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Parameter gradients (trainable paths only) and the input gradient.
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    pub params: ParamSet<T>,
    pub input: Tensor<T>,
}

struct Ctx<'a, T: Scalar> {
    params: &'a mut ParamSet<T>,
    mode: Mode,
    momentum: f64,
}

impl Network {
    pub fn new(arch: &ArchDescriptor) -> Self {
        Network {
            arch: arch.clone(),
            plan: arch.plan(),
        }
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn plan(&self) -> &[Node] {
        &self.plan
    }

    fn input_dims(&self, x_shape: &[usize]) -> Result<Dims> {
        let want = &self.arch.input_shape;
        if x_shape.len() != want.len() + 1 || &x_shape[1..] != want.as_slice() {
            return Err(Error::dim(format!(
                "{} expects input [batch, {}], got {x_shape:?}",
                self.arch.name,
                want.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
            )));
        }
        let (ch, h, w) = match want.as_slice() {
            [c, h, w] => (*c, *h, *w),
            _ => (want.iter().product(), 1, 1),
        };
        Ok(Dims {
            batch: x_shape[0],
            ch,
            h,
            w,
        })
    }

    /// Runs the network. In train mode batch-norm running statistics are
    /// blended with momentum 0.1.
    pub fn forward<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        self.forward_with_momentum(params, x, mode, layers::BN_MOMENTUM)
    }

    /// [`Self::forward`] with an explicit running-statistics momentum; a
    /// momentum of `1/i` on the `i`-th batch yields the cumulative average.
    pub fn forward_with_momentum<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        x: &Tensor<T>,
        mode: Mode,
        momentum: f64,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        let dims = self.input_dims(x.shape())?;
        let mut ctx = Ctx {
            params,
            mode,
            momentum,
        };
        let (out, d, nodes) = run(&self.plan, x.data().to_vec(), dims, &mut ctx)?;
        let logits = Tensor::new(vec![d.batch, d.per_sample()], out)?;
        Ok((
            logits,
            Cache {
                mode,
                input_shape: x.shape().to_vec(),
                nodes,
            },
        ))
    }

    /// Eval-mode logits without recording a cache.
    pub fn predict<T: Scalar>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let dims = self.input_dims(x.shape())?;
        let (out, d) = run_eval(&self.plan, x.data().to_vec(), dims, params)?;
        Tensor::new(vec![d.batch, d.per_sample()], out)
    }

    /// Backpropagates `d_logits` through a train-mode cache.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        cache: &Cache<T>,
        d_logits: &Tensor<T>,
    ) -> Result<Gradients<T>> {
        let (params, dx) = self.backward_inner(params, cache, d_logits, true)?;
        Ok(Gradients {
            params,
            input: Tensor::new(cache.input_shape.clone(), dx)?,
        })
    }

    /// [`Self::backward`] without the input gradient, which spares the
    /// first layer's input-side product.
    pub fn param_grads<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        cache: &Cache<T>,
        d_logits: &Tensor<T>,
    ) -> Result<ParamSet<T>> {
        Ok(self.backward_inner(params, cache, d_logits, false)?.0)
    }

    fn backward_inner<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        cache: &Cache<T>,
        d_logits: &Tensor<T>,
        want_dx: bool,
    ) -> Result<(ParamSet<T>, Vec<T>)> {
        if cache.mode != Mode::Train {
            return Err(Error::Usage(
                "backward needs a cache recorded in train mode, got an eval-mode cache".into(),
            ));
        }
        let mut grads = ParamSet::new();
        for (path, t) in params.iter() {
            if ParamKind::of_path(path).trainable() {
                grads.insert(path, Tensor::zeros(t.shape()));
            }
        }
        // Nodes up to the first parameterized one need no input gradient
        // unless the caller asked for it.
        let stop = if want_dx {
            0
        } else {
            self.plan.iter().position(has_params).unwrap_or(0)
        };
        let dx = back(&self.plan, &cache.nodes, d_logits.data().to_vec(), params, &mut grads, stop)?;
        Ok((grads, dx))
    }
}

fn data<'a, T: Scalar>(params: &'a ParamSet<T>, path: &str) -> Result<&'a [T]> {
    Ok(params.get(path)?.data())
}

fn run<T: Scalar>(
    nodes: &[Node],
    mut x: Vec<T>,
    mut d: Dims,
    ctx: &mut Ctx<'_, T>,
) -> Result<(Vec<T>, Dims, Vec<(Dims, NodeCache<T>)>)> {
    let mut caches = Vec::with_capacity(nodes.len());
    for node in nodes {
        let in_dims = d;
        let cache = match node {
            Node::Flatten => {
                d = Dims {
                    batch: d.batch,
                    ch: d.per_sample(),
                    h: 1,
                    w: 1,
                };
                NodeCache::Flatten
            }
            Node::Conv2d {
                path,
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                check_ch(path, *in_ch, d.ch)?;
                let geom = ConvGeom {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kernel: *kernel,
                    stride: *stride,
                    pad: *pad,
                    h: d.h,
                    w: d.w,
                };
                let w = data(ctx.params, &format!("{path}/weight"))?;
                let y = layers::conv_forward(&x, d.batch, &geom, w);
                let (ho, wo) = geom.out_hw();
                d = Dims {
                    batch: d.batch,
                    ch: *out_ch,
                    h: ho,
                    w: wo,
                };
                let input = std::mem::replace(&mut x, y);
                NodeCache::Conv {
                    input,
                    geom,
                }
            }
            Node::BatchNorm { path, ch } => {
                check_ch(path, *ch, d.ch)?;
                let p = ctx.params.get(&format!("{path}/gamma"))?.data().to_vec();
                let b = ctx.params.get(&format!("{path}/beta"))?.data().to_vec();
                match ctx.mode {
                    Mode::Train => {
                        let (y, cache) = layers::bn_train_forward(&x, d, &p, &b);
                        let count = d.batch * d.spatial();
                        let mut rmean = ctx.params.get(&format!("{path}/rmean"))?.data().to_vec();
                        let mut rvar = ctx.params.get(&format!("{path}/rvar"))?.data().to_vec();
                        layers::bn_update_running(&mut rmean, &mut rvar, &cache, count, ctx.momentum);
                        ctx.params.get_mut(&format!("{path}/rmean"))?.data_mut().copy_from_slice(&rmean);
                        ctx.params.get_mut(&format!("{path}/rvar"))?.data_mut().copy_from_slice(&rvar);
                        x = y;
                        NodeCache::BnTrain(cache)
                    }
                    Mode::Eval => {
                        let rm = data(ctx.params, &format!("{path}/rmean"))?;
                        let rv = data(ctx.params, &format!("{path}/rvar"))?;
                        let (y, scale) = layers::bn_eval_forward(&x, d, &p, &b, rm, rv);
                        x = y;
                        NodeCache::BnEval { scale }
                    }
                }
            }
            Node::Relu => {
                layers::relu_inplace(&mut x);
                NodeCache::Relu {
                    output: x.clone(),
                }
            }
            Node::MaxPool2x2 => {
                let (y, arg) = layers::maxpool_forward(&x, d);
                let in_len = x.len();
                x = y;
                d = Dims {
                    h: d.h / 2,
                    w: d.w / 2,
                    ..d
                };
                NodeCache::MaxPool { arg, in_len }
            }
            Node::GlobalAvgPool => {
                x = layers::gap_forward(&x, d);
                d = Dims { h: 1, w: 1, ..d };
                NodeCache::Gap { dims: in_dims }
            }
            Node::Dense { path, inp, out } => {
                check_ch(path, *inp, d.per_sample())?;
                let w = data(ctx.params, &format!("{path}/weight"))?;
                let b = data(ctx.params, &format!("{path}/bias"))?;
                let y = layers::dense_forward(&x, d.batch, *inp, *out, w, b);
                d = Dims {
                    batch: d.batch,
                    ch: *out,
                    h: 1,
                    w: 1,
                };
                let input = std::mem::replace(&mut x, y);
                NodeCache::Dense { input }
            }
            Node::Residual { main, shortcut } => {
                let (mut y, md, mc) = run(main, x.clone(), d, ctx)?;
                let (s, sd, sc) = run(shortcut, std::mem::take(&mut x), d, ctx)?;
                if md != sd {
                    return Err(Error::dim(format!("residual branches disagree: {md:?} vs {sd:?}")));
                }
                for (a, b) in y.iter_mut().zip(&s) {
                    *a += *b;
                }
                layers::relu_inplace(&mut y);
                d = md;
                x = y;
                NodeCache::Residual {
                    main: mc,
                    shortcut: sc,
                    output: x.clone(),
                }
            }
        };
        caches.push((in_dims, cache));
    }
    Ok((x, d, caches))
}

fn run_eval<T: Scalar>(nodes: &[Node], mut x: Vec<T>, mut d: Dims, params: &ParamSet<T>) -> Result<(Vec<T>, Dims)> {
    for node in nodes {
        match node {
            Node::Flatten => {
                d = Dims {
                    batch: d.batch,
                    ch: d.per_sample(),
                    h: 1,
                    w: 1,
                }
            }
            Node::Conv2d {
                path,
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                check_ch(path, *in_ch, d.ch)?;
                let geom = ConvGeom {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kernel: *kernel,
                    stride: *stride,
                    pad: *pad,
                    h: d.h,
                    w: d.w,
                };
                x = layers::conv_forward(&x, d.batch, &geom, data(params, &format!("{path}/weight"))?);
                let (ho, wo) = geom.out_hw();
                d = Dims {
                    batch: d.batch,
                    ch: *out_ch,
                    h: ho,
                    w: wo,
                };
            }
            Node::BatchNorm { path, ch } => {
                check_ch(path, *ch, d.ch)?;
                let g = |s: &str| data(params, &format!("{path}/{s}"));
                x = layers::bn_eval_forward(&x, d, g("gamma")?, g("beta")?, g("rmean")?, g("rvar")?).0;
            }
            Node::Relu => layers::relu_inplace(&mut x),
            Node::MaxPool2x2 => {
                x = layers::maxpool_forward(&x, d).0;
                d = Dims {
                    h: d.h / 2,
                    w: d.w / 2,
                    ..d
                };
            }
            Node::GlobalAvgPool => {
                x = layers::gap_forward(&x, d);
                d = Dims { h: 1, w: 1, ..d };
            }
            Node::Dense { path, inp, out } => {
                check_ch(path, *inp, d.per_sample())?;
                let w = data(params, &format!("{path}/weight"))?;
                let b = data(params, &format!("{path}/bias"))?;
                x = layers::dense_forward(&x, d.batch, *inp, *out, w, b);
                d = Dims {
                    batch: d.batch,
                    ch: *out,
                    h: 1,
                    w: 1,
                };
            }
            Node::Residual { main, shortcut } => {
                let (mut y, md) = run_eval(main, x.clone(), d, params)?;
                let (s, _) = run_eval(shortcut, x, d, params)?;
                for (a, b) in y.iter_mut().zip(&s) {
                    *a += *b;
                }
                layers::relu_inplace(&mut y);
                x = y;
                d = md;
            }
        }
    }
    Ok((x, d))
}

fn check_ch(path: &str, want: usize, got: usize) -> Result<()> {
    if want != got {
        return Err(Error::dim(format!("{path} expects {want} input features, got {got}")));
    }
    Ok(())
}

fn add_grad<T: Scalar>(grads: &mut ParamSet<T>, path: &str, g: &[T]) -> Result<()> {
    for (a, &b) in grads.get_mut(path)?.data_mut().iter_mut().zip(g) {
        *a += b;
    }
    Ok(())
}

fn has_params(node: &Node) -> bool {
    !matches!(node, Node::Flatten | Node::Relu | Node::MaxPool2x2 | Node::GlobalAvgPool)
}

/// Walks `nodes` backwards. Nodes before index `skip_below` are not visited
/// and the node at `skip_below` (when positive) skips its input gradient.
fn back<T: Scalar>(
    nodes: &[Node],
    caches: &[(Dims, NodeCache<T>)],
    mut dy: Vec<T>,
    params: &ParamSet<T>,
    grads: &mut ParamSet<T>,
    skip_below: usize,
) -> Result<Vec<T>> {
    for (i, (node, (d, cache))) in nodes.iter().zip(caches).enumerate().rev() {
        if i < skip_below {
            break;
        }
        let want_dx = skip_below == 0 || i > skip_below;
        dy = match (node, cache) {
            (Node::Flatten, NodeCache::Flatten) => dy,
            (Node::Conv2d { path, .. }, NodeCache::Conv { input, geom }) => {
                let w_path = format!("{path}/weight");
                let (dx, dw) = layers::conv_backward(input, &dy, d.batch, geom, data(params, &w_path)?, want_dx);
                add_grad(grads, &w_path, &dw)?;
                dx
            }
            (Node::BatchNorm { path, .. }, NodeCache::BnTrain(c)) => {
                let gamma = data(params, &format!("{path}/gamma"))?;
                let (dx, dg, db) = layers::bn_train_backward(&dy, *d, gamma, c);
                add_grad(grads, &format!("{path}/gamma"), &dg)?;
                add_grad(grads, &format!("{path}/beta"), &db)?;
                dx
            }
            (Node::BatchNorm { .. }, NodeCache::BnEval { scale }) => {
                let s = d.spatial();
                for (i, g) in dy.iter_mut().enumerate() {
                    *g *= scale[(i / s) % d.ch];
                }
                dy
            }
            (Node::Relu, NodeCache::Relu { output }) => {
                layers::relu_backward_inplace(&mut dy, output);
                dy
            }
            (Node::MaxPool2x2, NodeCache::MaxPool { arg, in_len }) => layers::maxpool_backward(&dy, arg, *in_len),
            (Node::GlobalAvgPool, NodeCache::Gap { dims }) => layers::gap_backward(&dy, *dims),
            (Node::Dense { path, inp, out }, NodeCache::Dense { input }) => {
                let w_path = format!("{path}/weight");
                let (dx, dw, db) = layers::dense_backward(input, &dy, d.batch, *inp, *out, data(params, &w_path)?, want_dx);
                add_grad(grads, &w_path, &dw)?;
                add_grad(grads, &format!("{path}/bias"), &db)?;
                dx
            }
            (
                Node::Residual { main, shortcut },
                NodeCache::Residual {
                    main: mc,
                    shortcut: sc,
                    output,
                },
            ) => {
                layers::relu_backward_inplace(&mut dy, output);
                let ds = back(shortcut, sc, dy.clone(), params, grads, 0)?;
                let mut dx = back(main, mc, dy, params, grads, 0)?;
                for (a, b) in dx.iter_mut().zip(&ds) {
                    *a += *b;
                }
                dx
            }
            _ => return Err(Error::Invariant("cache does not match the network plan".into())),
        };
    }
    Ok(dy)
}
