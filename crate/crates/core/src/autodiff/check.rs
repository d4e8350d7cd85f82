//! Central finite-difference checks of backward gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamSet, Tensor, Var};
use crate::error::Result;
use crate::net::{init_params, net_forward, MBANetConfig, NoiseInput};

/// Step used for every difference quotient.
pub const STEP: f64 = 1e-5;

/// Coordinates probed per tensor.
pub const PROBES: usize = 10;

/// Worst disagreement found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    /// Where the worst error occurred.
    pub location: String,
    pub probes: usize,
}

impl CheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            location: String::new(),
            probes: 0,
        }
    }

    fn record(&mut self, numeric: f64, analytic: f64, floor: f64, at: impl FnOnce() -> String) {
        let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(floor);
        self.probes += 1;
        if err > self.max_rel_error {
            self.max_rel_error = err;
            self.location = format!("{} numeric {numeric} backward {analytic}", at());
        }
    }
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Weighted-sum loss over the output of `f`, so every output entry carries a
/// distinct upstream gradient.
fn weighted<F>(inputs: &[Tensor<f64>], weights: &Tensor<f64>, f: &F) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod);
    Ok((g, vars, loss))
}

/// Checks the gradient of `sum(w ⊙ f(inputs))` with random weights `w` on
/// [`PROBES`] random coordinates (with replacement) of every input.
pub fn check_op<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
        let o = f(&mut g, &vars)?;
        g.shape(o).to_vec()
    };
    let weights = random_tensor(&mut rng, &out_shape);
    let (mut g, vars, loss) = weighted(inputs, &weights, &f)?;
    g.backward(loss)?;
    let mut report = CheckReport::new();
    for (k, input) in inputs.iter().enumerate() {
        let grad = g.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
        for _ in 0..PROBES {
            let i = rng.random_range(0..input.len());
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let (gp, _, lp) = weighted(&plus, &weights, &f)?;
            let (gm, _, lm) = weighted(&minus, &weights, &f)?;
            let numeric = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * STEP);
            report.record(numeric, grad[i], 1e-6, || format!("input {k}[{i}]"));
        }
    }
    Ok(report)
}

/// ℓ1 misfit of `J · vec(net output)` against a fixed target.
fn network_loss(
    cfg: &MBANetConfig,
    params: &ParamSet<f64>,
    z: &Tensor<f64>,
    j: &Tensor<f64>,
    v: &Tensor<f64>,
) -> Result<(Graph<f64>, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let zv = g.constant(z.clone());
    let out = net_forward(&mut g, cfg, params, &bound, zv)?;
    let flat = g.reshape(out, &[cfg.frames, cfg.height * cfg.width])?;
    let cols = g.transpose(flat)?;
    let jv = g.constant(j.clone());
    let pred = g.matmul(jv, cols)?;
    let target = g.constant(v.clone());
    let l = g.l1_loss(pred, target)?;
    Ok((g, bound.vars().to_vec(), l))
}

/// Checks every parameter tensor of the network composed with an ℓ1
/// objective against a random `measurements x HW` operator.
pub fn check_network(cfg: &MBANetConfig, measurements: usize, seed: u64) -> Result<CheckReport> {
    let mut params = init_params::<f64>(cfg, seed)?;
    let z = NoiseInput::sample(cfg, seed + 1).z;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let j = random_tensor(&mut rng, &[measurements, cfg.height * cfg.width]);
    let v = random_tensor(&mut rng, &[measurements, cfg.frames]);

    let (mut g, vars, l) = network_loss(cfg, &params, &z, &j, &v)?;
    g.backward(l)?;
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .map(|&x| g.grad(x).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    // below this magnitude central differences only resolve roundoff of the
    // loss value, so it acts as the relative-error floor
    let floor = 1e-6 * g.value(l).data()[0].abs().max(1.0);
    let mut report = CheckReport::new();
    for (k, grad) in grads.iter().enumerate() {
        let id = params.id_at(k);
        for _ in 0..PROBES {
            let i = rng.random_range(0..grad.len());
            let orig = params.tensor(id).data()[i];
            params.tensor_mut(id).data_mut()[i] = orig + STEP;
            let (gp, _, lp) = network_loss(cfg, &params, &z, &j, &v)?;
            params.tensor_mut(id).data_mut()[i] = orig - STEP;
            let (gm, _, lm) = network_loss(cfg, &params, &z, &j, &v)?;
            params.tensor_mut(id).data_mut()[i] = orig;
            let numeric = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * STEP);
            report.record(numeric, grad[i], floor, || format!("{}[{i}]", params.name(id)));
        }
    }
    Ok(report)
}

/// Checks every differentiable graph operation on small random inputs.
pub fn op_suite(seed: u64) -> Result<Vec<(String, CheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut s = seed;
    let mut run = |name: String, inputs: Vec<Tensor<f64>>, f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>| {
        s += 1;
        check_op(&inputs, s, f).map(|r| out.push((name, r)))
    };

    for &(stride, dilation, k) in &[(1, 1, 3), (2, 1, 3), (1, 2, 3), (1, 4, 3), (1, 1, 1), (2, 1, 1)] {
        let x = random_tensor(&mut rng, &[3, 8, 8]);
        let w = random_tensor(&mut rng, &[4, 3, k, k]);
        let b = random_tensor(&mut rng, &[4]);
        run(format!("conv2d k{k} s{stride} d{dilation}"), vec![x, w, b], &|g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), stride, dilation)
        })?;
    }
    run("upsample2x".into(), vec![random_tensor(&mut rng, &[2, 3, 5])], &|g, v| g.upsample2x(v[0]))?;

    // keep samples away from the leaky-relu kink
    let x = Tensor::new(
        &[2, 3, 3],
        (0..18)
            .map(|_| {
                let v: f64 = rng.random_range(0.05..1.0);
                if rng.random_bool(0.5) { v } else { -v }
            })
            .collect(),
    )?;
    let y = random_tensor(&mut rng, &[2, 3, 3]);
    run("leaky_relu".into(), vec![x.clone()], &|g, v| Ok(g.leaky_relu(v[0], 1e-4)))?;
    run("sigmoid".into(), vec![x.clone()], &|g, v| Ok(g.sigmoid(v[0])))?;
    run("global_avg_pool".into(), vec![x.clone()], &|g, v| g.global_avg_pool(v[0]))?;
    run("add".into(), vec![x.clone(), y.clone()], &|g, v| g.add(v[0], v[1]))?;
    run("mul".into(), vec![x, y], &|g, v| g.mul(v[0], v[1]))?;

    let a = random_tensor(&mut rng, &[2, 4, 4]);
    let b = random_tensor(&mut rng, &[1, 4, 4]);
    let sc = random_tensor(&mut rng, &[2]);
    run("concat".into(), vec![a.clone(), b.clone()], &|g, v| g.concat(&[v[0], v[1]]))?;
    run("mul_spatial".into(), vec![a.clone(), b], &|g, v| g.mul_spatial(v[0], v[1]))?;
    run("scale_channels".into(), vec![a.clone(), sc], &|g, v| g.scale_channels(v[0], v[1]))?;
    run("reshape+transpose".into(), vec![a], &|g, v| {
        let r = g.reshape(v[0], &[2, 16])?;
        g.transpose(r)
    })?;

    let m = random_tensor(&mut rng, &[3, 4]);
    let n = random_tensor(&mut rng, &[4, 5]);
    run("matmul".into(), vec![m.clone(), n], &|g, v| g.matmul(v[0], v[1]))?;
    run("softmax_rows".into(), vec![m], &|g, v| g.softmax_rows(v[0]))?;
    let w = random_tensor(&mut rng, &[3, 4]);
    let xv = random_tensor(&mut rng, &[4]);
    let bias = random_tensor(&mut rng, &[3]);
    run("linear".into(), vec![xv, w, bias], &|g, v| g.linear(v[0], v[1], Some(v[2])))?;

    let t = random_tensor(&mut rng, &[5, 3, 3]);
    run("aln".into(), vec![t.clone()], &|g, v| g.aln(v[0], 1e-5))?;
    run("channel_norm".into(), vec![t], &|g, v| g.channel_norm(v[0], 1e-5))?;

    let p = random_tensor(&mut rng, &[6, 3]);
    let q = random_tensor(&mut rng, &[6, 3]);
    run("l1_loss".into(), vec![p.clone(), q.clone()], &|g, v| g.l1_loss(v[0], v[1]))?;
    run("frobenius_loss".into(), vec![p, q], &|g, v| g.frobenius_loss(v[0], v[1]))?;
    Ok(out)
}
