use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, LstmInputs, SruInputs, Tensor};

/// Weights of one SRU direction. Matrices are `d_h x d_in`.
#[derive(Clone, Debug)]
pub struct SruLayerParams<T: Element> {
    pub w: Tensor<T>,
    pub w_f: Tensor<T>,
    pub w_r: Tensor<T>,
    /// Highway projection; required unless `d_in == d_h`.
    pub proj: Option<Tensor<T>>,
    pub v_f: Tensor<T>,
    pub v_r: Tensor<T>,
    pub b_f: Tensor<T>,
    pub b_r: Tensor<T>,
}

/// Weights of one LSTM direction, gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct LstmLayerParams<T: Element> {
    /// `4 d_h x d_in`.
    pub w_ih: Tensor<T>,
    /// `4 d_h x d_h`.
    pub w_hh: Tensor<T>,
    /// `4 d_h`.
    pub bias: Tensor<T>,
}

/// Runs one SRU direction over `x` (`n x d_in`) from cell state `c0`.
/// Returns the hidden states (`n x d_h`) and the final cell state.
pub fn sru_layer_forward<T: Element>(
    x: &Tensor<T>,
    c0: &Tensor<T>,
    p: &SruLayerParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, din) = x
        .dims2()
        .filter(|_| x.rank() == 2)
        .ok_or_else(|| Error::invalid("sru input must be a matrix"))?;
    if n == 0 {
        return Err(Error::invalid("sru input has no time steps"));
    }
    let dh = p.v_f.len();
    for m in [&p.w, &p.w_f, &p.w_r].into_iter().chain(p.proj.as_ref()) {
        if m.shape() != [dh, din] {
            return Err(Error::Shape {
                op: "sru weight",
                lhs: m.shape().to_vec(),
                rhs: vec![dh, din],
            });
        }
    }
    if p.proj.is_none() && din != dh {
        return Err(Error::Shape {
            op: "sru highway without projection",
            lhs: vec![n, din],
            rhs: vec![dh],
        });
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let project = |g: &mut Graph<T>, m: &Tensor<T>| {
        let mv = g.constant(m.clone());
        g.matmul_t(xv, mv, false, true)
    };
    let candidate = project(&mut g, &p.w)?;
    let forget = project(&mut g, &p.w_f)?;
    let reset = project(&mut g, &p.w_r)?;
    let highway = match &p.proj {
        Some(m) => project(&mut g, m)?,
        None => xv,
    };
    let c0 = g.constant(c0.reshaped(vec![1, dh])?);
    let inputs = SruInputs {
        candidate,
        forget,
        reset,
        highway,
        v_f: g.constant(p.v_f.clone()),
        v_r: g.constant(p.v_r.clone()),
        b_f: g.constant(p.b_f.clone()),
        b_r: g.constant(p.b_r.clone()),
        c0: Some(c0),
    };
    let (h, c_last) = g.sru(inputs, 1, n)?;
    Ok((g.value(h).clone(), c_last.reshaped(vec![dh])?))
}

/// Runs one LSTM direction over `x` (`n x d_in`) from `(h0, c0)`.
/// Returns the hidden states and the final `(h, c)`.
pub fn lstm_layer_forward<T: Element>(
    x: &Tensor<T>,
    state0: (&Tensor<T>, &Tensor<T>),
    p: &LstmLayerParams<T>,
) -> Result<(Tensor<T>, (Tensor<T>, Tensor<T>))> {
    let n = x.shape().first().copied().unwrap_or(0);
    if x.rank() != 2 || n == 0 {
        return Err(Error::invalid("lstm input must be a non-empty matrix"));
    }
    let dh = p.w_hh.shape().get(1).copied().unwrap_or(0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w_ih = g.constant(p.w_ih.clone());
    let pre = g.matmul_t(xv, w_ih, false, true)?;
    let bias = g.constant(p.bias.clone());
    let projected = g.add_bias(pre, bias)?;
    let h0 = g.constant(state0.0.reshaped(vec![1, dh])?);
    let c0 = g.constant(state0.1.reshaped(vec![1, dh])?);
    let inputs = LstmInputs {
        projected,
        w_hh: g.constant(p.w_hh.clone()),
        h0: Some(h0),
        c0: Some(c0),
    };
    let (h, (h_n, c_n)) = g.lstm(inputs, 1, n)?;
    Ok((g.value(h).clone(), (h_n.reshaped(vec![dh])?, c_n.reshaped(vec![dh])?)))
}
