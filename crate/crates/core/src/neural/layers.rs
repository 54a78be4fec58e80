use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use super::Real;
use crate::error::{check_dim, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

/// `y = act(W x + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    /// Xavier-uniform weights scaled by `gain`, zero bias.
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = gain * (6.0 / (input + output) as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), vec![output, input], bound, rng)?;
        let b = store.add_zeros(format!("{name}.b"), vec![output])?;
        Ok(Dense { w, b, input, output, activation })
    }

    /// Bind to existing tensors, checking shapes.
    pub fn bind<T: Real>(store: &ParamStore<T>, name: &str, input: usize, output: usize, activation: Activation) -> Result<Self> {
        let w = store.require(&format!("{name}.w"), &[output, input])?;
        let b = store.require(&format!("{name}.b"), &[output])?;
        Ok(Dense { w, b, input, output, activation })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        check_dim(self.input, g.len(x))?;
        let wx = g.matvec(self.w, x);
        let b = g.param(self.b);
        let y = g.add(wx, b);
        Ok(match self.activation {
            Activation::Identity => y,
            Activation::Tanh => g.tanh(y),
        })
    }
}

/// Stack of dense layers: tanh on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        sizes: &[usize],
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                let act = if last { Activation::Identity } else { Activation::Tanh };
                let gain = if last { output_gain } else { 1.0 };
                Dense::init(store, &format!("{name}.l{i}"), sizes[i], sizes[i + 1], act, gain, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, name: &str, sizes: &[usize]) -> Result<Self> {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { Activation::Tanh };
                Dense::bind(store, &format!("{name}.l{i}"), sizes[i], sizes[i + 1], act)
            })
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        self.layers.iter().try_fold(x, |h, l| l.forward(g, h))
    }
}

/// Gated recurrent cell:
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// r  = sigmoid(Wr x + Ur h + br)
/// h~ = tanh(Wh x + Uh (r * h) + bh)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wh: ParamId,
    uh: ParamId,
    bh: ParamId,
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl GruCell {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        for gate in GATES {
            store.add_uniform(format!("{name}.w{gate}"), vec![hidden, input], bound, rng)?;
            store.add_uniform(format!("{name}.u{gate}"), vec![hidden, hidden], bound, rng)?;
            store.add_zeros(format!("{name}.b{gate}"), vec![hidden])?;
        }
        GruCell::bind(store, name, input, hidden)
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let w = |g: &str| store.require(&format!("{name}.w{g}"), &[hidden, input]);
        let u = |g: &str| store.require(&format!("{name}.u{g}"), &[hidden, hidden]);
        let b = |g: &str| store.require(&format!("{name}.b{g}"), &[hidden]);
        Ok(GruCell {
            input,
            hidden,
            wz: w("z")?,
            uz: u("z")?,
            bz: b("z")?,
            wr: w("r")?,
            ur: u("r")?,
            br: b("r")?,
            wh: w("h")?,
            uh: u("h")?,
            bh: b("h")?,
        })
    }

    fn gate<T: Real>(&self, g: &mut Graph<'_, T>, w: ParamId, u: ParamId, b: ParamId, x: NodeId, h: NodeId) -> NodeId {
        let wx = g.matvec(w, x);
        let uh = g.matvec(u, h);
        let s = g.add(wx, uh);
        let bb = g.param(b);
        g.add(s, bb)
    }

    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, h: NodeId, x: NodeId) -> Result<NodeId> {
        check_dim(self.input, g.len(x))?;
        check_dim(self.hidden, g.len(h))?;
        let z_pre = self.gate(g, self.wz, self.uz, self.bz, x, h);
        let z = g.sigmoid(z_pre);
        let r_pre = self.gate(g, self.wr, self.ur, self.br, x, h);
        let r = g.sigmoid(r_pre);
        let rh = g.mul(r, h);
        let c_pre = self.gate(g, self.wh, self.uh, self.bh, x, rh);
        let cand = g.tanh(c_pre);
        let keep = g.one_minus(z);
        let old = g.mul(keep, h);
        let new = g.mul(z, cand);
        Ok(g.add(old, new))
    }
}
