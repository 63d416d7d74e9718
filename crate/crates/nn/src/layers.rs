//! Dense layers, multilayer perceptrons and the GRU cell, expressed on the tape.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::params::ParameterSet;
use crate::tape::{Tape, Var};
use crate::tensor::TensorBuffer;

/// Whether parameters enter the tape as trainable or as constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Train,
    Frozen,
}

pub(crate) fn bind<'p>(tape: &mut Tape<'p>, set: &'p ParameterSet, name: &str, mode: Binding) -> Result<Var> {
    match mode {
        Binding::Train => tape.param(set, name),
        Binding::Frozen => tape.frozen(set, name),
    }
}

/// `weights · input + bias` for a batch of row vectors, recorded on the tape.
pub fn linear_forward(tape: &mut Tape<'_>, input: Var, weights: Var, bias: Var) -> Result<Var> {
    let (_, in_dim) = tape.shape(input);
    let (out_dim, w_in) = tape.shape(weights);
    if in_dim != w_in {
        return Err(NnError::Config(format!(
            "linear: input width {in_dim} does not match weight columns {w_in}"
        )));
    }
    if tape.value(bias).len() != out_dim {
        return Err(NnError::Config(format!(
            "linear: bias length {} does not match output width {out_dim}",
            tape.value(bias).len()
        )));
    }
    let y = tape.matmul_t(input, weights);
    Ok(tape.add_bias(y, bias))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// A dense layer whose weights live in a [`ParameterSet`] under `<name>.weight`
/// (`[out, in]`) and `<name>.bias` (`[out]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Glorot weights, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterSet, rng: &mut R) -> Result<()> {
        params.insert(
            self.weight_name(),
            TensorBuffer::glorot(vec![self.out_dim, self.in_dim], rng),
        )?;
        params.insert(self.bias_name(), TensorBuffer::zeros(vec![self.out_dim]))?;
        Ok(())
    }

    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        x: Var,
        mode: Binding,
    ) -> Result<Var> {
        let w = bind(tape, params, &self.weight_name(), mode)?;
        let b = bind(tape, params, &self.bias_name(), mode)?;
        linear_forward(tape, x, w, b)
    }
}

impl Dense {
    /// [`Dense::forward`] on the column concatenation of `parts`, computed
    /// blockwise so that constant blocks never receive input gradients.
    pub fn forward_parts<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        parts: &[Var],
        mode: Binding,
    ) -> Result<Var> {
        let width: usize = parts.iter().map(|&p| tape.shape(p).1).sum();
        if parts.is_empty() || width != self.in_dim {
            return Err(NnError::Config(format!(
                "{}: input blocks span {width} columns, expected {}",
                self.name, self.in_dim
            )));
        }
        let w = bind(tape, params, &self.weight_name(), mode)?;
        let b = bind(tape, params, &self.bias_name(), mode)?;
        let mut start = 0;
        let mut acc: Option<Var> = None;
        for &part in parts {
            let cols = tape.shape(part).1;
            let block = tape.slice_cols(w, start, cols);
            let y = tape.matmul_t(part, block);
            acc = Some(match acc {
                Some(a) => tape.add(a, y),
                None => y,
            });
            start += cols;
        }
        let y = acc.expect("at least one block");
        Ok(tape.add_bias(y, b))
    }
}

/// Stack of dense layers; `activation` after every layer but the last, which
/// uses `output`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub output: Activation,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`.
    pub fn new(prefix: &str, sizes: &[usize], activation: Activation, output: Activation) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(format!("{prefix}.{i}"), w[0], w[1]))
            .collect();
        Self {
            layers,
            activation,
            output,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterSet, rng: &mut R) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(params, rng))
    }

    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        mut x: Var,
        mode: Binding,
    ) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, params, x, mode)?;
            let act = if i == last { self.output } else { self.activation };
            x = act.apply(tape, x);
        }
        Ok(x)
    }

    /// [`Mlp::forward`] with the input given as column blocks.
    pub fn forward_parts<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        parts: &[Var],
        mode: Binding,
    ) -> Result<Var> {
        let Some(first) = self.layers.first() else {
            return Err(NnError::Config("empty MLP".into()));
        };
        let mut x = first.forward_parts(tape, params, parts, mode)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = layer.forward(tape, params, x, mode)?;
            }
            let act = if i == last { self.output } else { self.activation };
            x = act.apply(tape, x);
        }
        Ok(x)
    }
}

/// GRU hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    hidden: Vec<f64>,
}

impl GruState {
    pub fn zeros(width: usize) -> Self {
        Self {
            hidden: vec![0.0; width],
        }
    }

    pub fn from_vec(hidden: Vec<f64>) -> Self {
        Self { hidden }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.hidden
    }

    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.hidden
    }
}

/// GRU cell with gate order (reset, update, candidate):
///
/// ```text
/// r  = σ(W_r x + b_r + U_r h + c_r)
/// u  = σ(W_u x + b_u + U_u h + c_u)
/// n  = tanh(W_n x + b_n + r ⊙ (U_n h + c_n))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            name: name.into(),
            input,
            hidden,
        }
    }

    fn pname(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterSet, rng: &mut R) -> Result<()> {
        let h = self.hidden;
        params.insert(self.pname("w_ih"), TensorBuffer::glorot(vec![3 * h, self.input], rng))?;
        params.insert(self.pname("w_hh"), TensorBuffer::glorot(vec![3 * h, h], rng))?;
        params.insert(self.pname("b_ih"), TensorBuffer::zeros(vec![3 * h]))?;
        params.insert(self.pname("b_hh"), TensorBuffer::zeros(vec![3 * h]))?;
        Ok(())
    }

    /// One recurrent step on the tape; `x: [B, input]`, `h: [B, hidden]`.
    pub fn step<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        x: Var,
        h: Var,
        mode: Binding,
    ) -> Result<Var> {
        let hd = self.hidden;
        if tape.shape(x).1 != self.input {
            return Err(NnError::Config(format!(
                "gru '{}': input width {} but cell expects {}",
                self.name,
                tape.shape(x).1,
                self.input
            )));
        }
        if tape.shape(h).1 != hd || tape.shape(h).0 != tape.shape(x).0 {
            return Err(NnError::Config(format!(
                "gru '{}': hidden state shape {:?} does not match",
                self.name,
                tape.shape(h)
            )));
        }
        let w_ih = bind(tape, params, &self.pname("w_ih"), mode)?;
        let w_hh = bind(tape, params, &self.pname("w_hh"), mode)?;
        let b_ih = bind(tape, params, &self.pname("b_ih"), mode)?;
        let b_hh = bind(tape, params, &self.pname("b_hh"), mode)?;
        let gx = linear_forward(tape, x, w_ih, b_ih)?;
        let gh = linear_forward(tape, h, w_hh, b_hh)?;

        let xr = tape.slice_cols(gx, 0, hd);
        let xu = tape.slice_cols(gx, hd, hd);
        let xn = tape.slice_cols(gx, 2 * hd, hd);
        let hr = tape.slice_cols(gh, 0, hd);
        let hu = tape.slice_cols(gh, hd, hd);
        let hn = tape.slice_cols(gh, 2 * hd, hd);

        let r_pre = tape.add(xr, hr);
        let r = tape.sigmoid(r_pre);
        let u_pre = tape.add(xu, hu);
        let u = tape.sigmoid(u_pre);
        let gated = tape.mul(r, hn);
        let n_pre = tape.add(xn, gated);
        let n = tape.tanh(n_pre);

        let neg_u = tape.scale(u, -1.0);
        let keep_new = tape.offset(neg_u, 1.0);
        let fresh = tape.mul(keep_new, n);
        let carried = tape.mul(u, h);
        Ok(tape.add(fresh, carried))
    }
}

/// Single-sample GRU step without recording gradients.
pub fn gru_step(input: &[f64], state: &GruState, cell: &GruCell, params: &ParameterSet) -> Result<GruState> {
    if input.len() != cell.input {
        return Err(NnError::Config(format!(
            "gru_step: input length {} but cell expects {}",
            input.len(),
            cell.input
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant(1, input.len(), input.to_vec());
    let h = tape.constant(1, state.len(), state.as_slice().to_vec());
    let out = cell.step(&mut tape, params, x, h, Binding::Frozen)?;
    Ok(GruState::from_vec(tape.value(out).to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval_linear(input: &[f64], w: (usize, usize, Vec<f64>), b: Vec<f64>) -> Result<Vec<f64>> {
        let mut p = ParameterSet::new();
        p.insert("w", TensorBuffer::new(vec![w.0, w.1], w.2).unwrap()).unwrap();
        let bl = b.len();
        p.insert("b", TensorBuffer::new(vec![bl], b).unwrap()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(1, input.len(), input.to_vec());
        let wv = tape.param(&p, "w").unwrap();
        let bv = tape.param(&p, "b").unwrap();
        let y = linear_forward(&mut tape, x, wv, bv)?;
        Ok(tape.value(y).to_vec())
    }

    #[test]
    fn blockwise_forward_matches_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mlp = Mlp::new("m", &[5, 4, 2], Activation::Relu, Activation::Identity);
        let mut p = ParameterSet::new();
        mlp.init(&mut p, &mut rng).unwrap();
        let a: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..6).map(|i| (i as f64 * 0.91).cos()).collect();
        let run = |blocks: bool| {
            let mut tape = Tape::new();
            let xa = tape.constant(3, 3, a.clone());
            let xc = tape.input_with_grad(3, 2, c.clone());
            let y = if blocks {
                mlp.forward_parts(&mut tape, &p, &[xa, xc], Binding::Train).unwrap()
            } else {
                let x = tape.concat(&[xa, xc]);
                mlp.forward(&mut tape, &p, x, Binding::Train).unwrap()
            };
            let values = tape.value(y).to_vec();
            let loss = tape.sum(y);
            let g = tape.backward(loss).unwrap();
            let input = g.wrt(xc).unwrap().to_vec();
            let params: Vec<Vec<f64>> = (0..p.len()).map(|i| g.param(p.id(), i).unwrap().to_vec()).collect();
            (values, input, params)
        };
        let (v1, i1, p1) = run(true);
        let (v2, i2, p2) = run(false);
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12);
        assert!(close(&v1, &v2));
        assert!(close(&i1, &i2));
        for (x, y) in p1.iter().zip(&p2) {
            assert!(close(x, y));
        }
    }

    #[test]
    fn blockwise_width_mismatch_is_rejected() {
        let d = Dense::new("d", 4, 2);
        let mut p = ParameterSet::new();
        d.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(1, 3, vec![0.0; 3]);
        assert!(d.forward_parts(&mut tape, &p, &[x], Binding::Frozen).is_err());
    }

    #[test]
    fn linear_examples() {
        assert_eq!(
            eval_linear(&[1.0, 2.0], (2, 2, vec![1.0, 0.0, 0.0, 1.0]), vec![0.0, 0.0]).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            eval_linear(&[1.0, 1.0], (1, 2, vec![2.0, 3.0]), vec![1.0]).unwrap(),
            vec![6.0]
        );
        assert_eq!(
            eval_linear(&[0.0, 0.0, 0.0], (1, 3, vec![0.4, -9.0, 2.0]), vec![5.0]).unwrap(),
            vec![5.0]
        );
    }

    #[test]
    fn linear_dimension_mismatch() {
        assert!(matches!(
            eval_linear(&[1.0, 2.0, 3.0], (2, 2, vec![0.0; 4]), vec![0.0, 0.0]),
            Err(NnError::Config(_))
        ));
        assert!(matches!(
            eval_linear(&[1.0, 2.0], (2, 2, vec![0.0; 4]), vec![0.0]),
            Err(NnError::Config(_))
        ));
    }

    #[test]
    fn gru_zero_params_zero_state() {
        let cell = GruCell::new("g", 3, 4);
        let mut p = ParameterSet::new();
        for (n, shape) in [("w_ih", vec![12, 3]), ("w_hh", vec![12, 4]), ("b_ih", vec![12]), ("b_hh", vec![12])] {
            p.insert(format!("g.{n}"), TensorBuffer::zeros(shape)).unwrap();
        }
        let out = gru_step(&[0.3, -1.0, 2.0], &GruState::zeros(4), &cell, &p).unwrap();
        assert_eq!(out.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn gru_saturated_update_gate_carries_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cell = GruCell::new("g", 2, 3);
        let mut p = ParameterSet::new();
        cell.init(&mut p, &mut rng).unwrap();
        // update-gate bias rows [h, 2h) → large positive
        let b = p.get_mut("g.b_ih").unwrap();
        b.values_mut()[3..6].iter_mut().for_each(|v| *v = 60.0);
        let h0 = GruState::from_vec(vec![0.4, -0.2, 0.9]);
        let out = gru_step(&[1.5, -0.5], &h0, &cell, &p).unwrap();
        for (a, b) in out.as_slice().iter().zip(h0.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell = GruCell::new("g", 2, 3);
        let mut p = ParameterSet::new();
        cell.init(&mut p, &mut rng).unwrap();
        assert!(gru_step(&[1.0], &GruState::zeros(3), &cell, &p).is_err());
    }
}
