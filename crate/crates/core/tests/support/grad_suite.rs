//! Finite-difference checks of every layer kind and every training loss in
//! 64-bit arithmetic. Shared by the core test suite and the acceptance run.

use std::collections::BTreeMap;

use latentflow::mld::{augmented_loss, MldArch, ModalityMask, PreparedEpisode};
use latentflow::sac::{Agent, Batch, SacConfig};
use latentflow::tensor::{grad_check, init_params, Binding, ConvGeometry, LayerSpec, Network};
use latentflow::{Graph, ParamStore, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

type Eval = Box<
    dyn Fn(&ParamStore<f64>) -> latentflow::tensor::Result<(f64, BTreeMap<String, Tensor<f64>>)>,
>;

pub struct Case {
    pub name: &'static str,
    pub point: ParamStore<f64>,
    pub eval: Eval,
    /// Elements probed per tensor; `None` probes all.
    pub probes: Option<usize>,
}

impl Case {
    pub fn worst_error(&self) -> f64 {
        grad_check(&self.eval, &self.point, EPS, self.probes)
            .unwrap_or_else(|e| panic!("{}: {e}", self.name))
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), uniform(rng, shape.iter().product(), scale)).unwrap()
}

/// Moves every parameter off its initial value so biases are non-zero too.
fn jitter(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        for v in store.value_mut(&n).unwrap().data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

/// `Σ c ⊙ out` with fixed random weights, so every output element matters.
fn probe_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> latentflow::tensor::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = g.constant(random_tensor(&mut rng, g.value(out).shape(), 1.0));
    let m = g.mul(out, c)?;
    Ok(g.sum(m))
}

fn finish(
    g: &Graph<f64>,
    root: Var,
    p: &ParamStore<f64>,
) -> latentflow::tensor::Result<(f64, BTreeMap<String, Tensor<f64>>)> {
    let grads = g.backward(root)?;
    Ok((g.value(root).item(), grads.for_store(p)))
}

fn other<E: std::fmt::Display>(e: E) -> TensorError {
    TensorError::Usage(e.to_string())
}

fn least_squares() -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut point = ParamStore::new();
    point
        .insert("w", random_tensor(&mut rng, &[4, 3], 0.5))
        .unwrap();
    point
        .insert("x", random_tensor(&mut rng, &[2, 4], 1.0))
        .unwrap();
    let y = random_tensor(&mut rng, &[2, 3], 1.0);
    Case {
        name: "0.5*||Wx - y||^2",
        point,
        probes: None,
        eval: Box::new(move |p| {
            let mut g = Graph::new();
            let (w, x) = (g.param(p, "w")?, g.param(p, "x")?);
            let y = g.constant(y.clone());
            let wx = g.matmul(x, w)?;
            let d = g.sub(wx, y)?;
            let sq = g.square(d);
            let s = g.sum(sq);
            let root = g.scale(s, 0.5);
            finish(&g, root, p)
        }),
    }
}

/// A network applied to a trainable input, scored by [`probe_sum`].
fn network_case(name: &'static str, net: Network, input_shape: &[usize], seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut point = init_params::<f64>(&net, seed).unwrap();
    jitter(&mut point, &mut rng, 0.1);
    point
        .insert("input", random_tensor(&mut rng, input_shape, 1.0))
        .unwrap();
    Case {
        name,
        point,
        probes: Some(40),
        eval: Box::new(move |p| {
            let mut g = Graph::new();
            let x = g.param(p, "input")?;
            let out = net.forward(&mut g, p, x, Binding::Trainable)?;
            let root = probe_sum(&mut g, out, seed)?;
            finish(&g, root, p)
        }),
    }
}

fn fully_connected() -> Case {
    network_case(
        "fully connected",
        Network::new(
            "fc",
            vec![LayerSpec::FullyConnected {
                inputs: 5,
                outputs: 3,
            }],
        ),
        &[4, 5],
        2,
    )
}

fn tanh() -> Case {
    network_case(
        "tanh",
        Network::new(
            "t",
            vec![
                LayerSpec::FullyConnected {
                    inputs: 3,
                    outputs: 4,
                },
                LayerSpec::Tanh,
            ],
        ),
        &[3, 3],
        3,
    )
}

fn relu_mlp() -> Case {
    network_case(
        "relu mlp",
        Network::mlp("mlp", &[6, 8, 8, 2], Some(LayerSpec::ReLU)),
        &[5, 6],
        4,
    )
}

fn conv_flatten() -> Case {
    let conv = LayerSpec::conv(2, 3, 7, 9);
    let g = conv.geometry().unwrap();
    let flat = g.out_channels * g.out_h() * g.out_w();
    network_case(
        "conv2d stride 2 + flatten",
        Network::new(
            "conv",
            vec![
                conv,
                LayerSpec::Tanh,
                LayerSpec::Flatten,
                LayerSpec::FullyConnected {
                    inputs: flat,
                    outputs: 2,
                },
            ],
        ),
        &[2, 2, 7, 9],
        5,
    )
}

fn raw_conv() -> Case {
    let geom = ConvGeometry::new(3, 2, 6, 5, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut point = ParamStore::new();
    point
        .insert("x", random_tensor(&mut rng, &[2, 3, 6, 5], 1.0))
        .unwrap();
    point
        .insert("w", random_tensor(&mut rng, &geom.weight_shape(), 0.5))
        .unwrap();
    point
        .insert("b", random_tensor(&mut rng, &[2], 0.5))
        .unwrap();
    Case {
        name: "conv2d input, kernel and bias",
        point,
        probes: None,
        eval: Box::new(move |p| {
            let mut g = Graph::new();
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
            let y = g.conv2d(x, w, b, geom)?;
            let root = probe_sum(&mut g, y, 6)?;
            finish(&g, root, p)
        }),
    }
}

fn concat() -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut point = ParamStore::new();
    point
        .insert("a", random_tensor(&mut rng, &[3, 2], 1.0))
        .unwrap();
    point
        .insert("b", random_tensor(&mut rng, &[3, 4], 1.0))
        .unwrap();
    point
        .insert("w", random_tensor(&mut rng, &[6, 2], 1.0))
        .unwrap();
    Case {
        name: "concat",
        point,
        probes: None,
        eval: Box::new(|p| {
            let mut g = Graph::new();
            let (a, b, w) = (g.param(p, "a")?, g.param(p, "b")?, g.param(p, "w")?);
            let c = LayerSpec::Concat.forward(&mut g, None, &[a, b])?;
            let y = g.matmul(c, w)?;
            let y = g.tanh(y);
            let root = probe_sum(&mut g, y, 7)?;
            finish(&g, root, p)
        }),
    }
}

fn small_arch(mask: ModalityMask) -> MldArch {
    MldArch {
        ny: 7,
        nx: 7,
        nz: 2,
        n_actions: 3,
        n_responses: 2,
        latent_dim: 4,
        conv_channels: vec![2, 3],
        branch_features: 5,
        relperm_hidden: 4,
        hidden: 6,
        mask,
    }
}

fn representation() -> Case {
    let arch = small_arch(ModalityMask::all());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut point = arch.init::<f64>(8).unwrap();
    jitter(&mut point, &mut rng, 0.05);
    let states = random_tensor(&mut rng, &[3, 2, 7, 7], 1.0);
    let statics = random_tensor(&mut rng, &[2, 4, 7, 7], 1.0);
    let relperm = random_tensor(&mut rng, &[2, 6], 1.0);
    Case {
        name: "representation module",
        point,
        probes: Some(25),
        eval: Box::new(move |p| {
            let mut g = Graph::new();
            let s = g.constant(states.clone());
            let st = g.constant(statics.clone());
            let rp = g.constant(relperm.clone());
            let z = arch
                .encode(
                    &mut g,
                    p,
                    s,
                    Some(st),
                    Some(rp),
                    &[0, 1, 1],
                    Binding::Trainable,
                )
                .map_err(other)?;
            let root = probe_sum(&mut g, z, 8)?;
            finish(&g, root, p)
        }),
    }
}

fn toy_episode(rng: &mut ChaCha8Rng, arch: &MldArch, horizon: usize) -> PreparedEpisode {
    PreparedEpisode {
        static_fields: uniform(rng, arch.static_len(), 1.0),
        relperm: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
        states: uniform(rng, (horizon + 1) * arch.state_len(), 1.0),
        actions: uniform(rng, horizon * arch.n_actions, 1.0),
        responses: uniform(rng, horizon * arch.n_responses, 0.9),
        physical_responses: vec![0.0; horizon * arch.n_responses],
        horizon,
    }
}

fn mld_loss() -> Case {
    let arch = small_arch(ModalityMask::all());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut point = arch.init::<f64>(9).unwrap();
    jitter(&mut point, &mut rng, 0.05);
    let episodes = vec![
        toy_episode(&mut rng, &arch, 2),
        toy_episode(&mut rng, &arch, 2),
    ];
    Case {
        name: "mld augmented loss",
        point,
        probes: Some(25),
        eval: Box::new(move |p| {
            let batch: Vec<&PreparedEpisode> = episodes.iter().collect();
            let l = augmented_loss(&arch, p, &batch, 10.0, Some(5e-4)).map_err(other)?;
            finish(&l.graph, l.total, p)
        }),
    }
}

const OBS: usize = 3;
const ACT: usize = 2;
const ROWS: usize = 4;

fn toy_agent(seed: u64) -> Agent<f64> {
    let cfg = SacConfig {
        hidden: 8,
        batch_size: ROWS,
        ..SacConfig::default()
    };
    let mut agent = Agent::<f64>::new(OBS, ACT, cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for store in [&mut agent.policy, &mut agent.q1, &mut agent.q2] {
        jitter(store, &mut rng, 0.1);
    }
    agent
}

fn toy_batch(rng: &mut ChaCha8Rng) -> Batch {
    Batch {
        len: ROWS,
        z: uniform(rng, ROWS * OBS, 1.0),
        a: uniform(rng, ROWS * ACT, 0.9),
        r: uniform(rng, ROWS, 1.0),
        z_next: uniform(rng, ROWS * OBS, 1.0),
        done: vec![0.0, 0.0, 0.0, 1.0],
    }
}

fn q_loss() -> Case {
    let agent = toy_agent(10);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let batch = toy_batch(&mut rng);
    let noise = agent.draw_noise(ROWS, &mut rng);
    let targets = agent.q_targets(&batch, &noise, 0.2).unwrap();
    let mut point = agent.q1.clone();
    point.merge(agent.q2.clone()).unwrap();
    Case {
        name: "sac critic loss",
        point,
        probes: Some(30),
        eval: Box::new(move |p| {
            let (mut g, l1, l2) = agent.q_loss_graph(p, p, &batch, &targets).map_err(other)?;
            let root = g.add(l1, l2)?;
            finish(&g, root, p)
        }),
    }
}

fn policy_loss() -> Case {
    let agent = toy_agent(11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let obs = uniform(&mut rng, ROWS * OBS, 1.0);
    let noise = agent.draw_noise(ROWS, &mut rng);
    Case {
        name: "sac policy loss",
        point: agent.policy.clone(),
        probes: Some(30),
        eval: Box::new(move |p| {
            let (g, loss, _) = agent
                .policy_loss_graph(p, &obs, &noise, 0.3)
                .map_err(other)?;
            finish(&g, loss, p)
        }),
    }
}

fn alpha_loss() -> Case {
    let agent = toy_agent(12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let log_probs = uniform(&mut rng, ROWS, 3.0);
    let mut point = agent.log_alpha.clone();
    let name = point.names().next().unwrap().to_string();
    point.value_mut(&name).unwrap().data_mut()[0] = -0.7;
    Case {
        name: "sac temperature loss",
        point,
        probes: None,
        eval: Box::new(move |p| {
            let (g, loss) = agent.alpha_loss_graph(p, &log_probs).map_err(other)?;
            finish(&g, loss, p)
        }),
    }
}

pub fn cases() -> Vec<Case> {
    vec![
        least_squares(),
        fully_connected(),
        tanh(),
        relu_mlp(),
        conv_flatten(),
        raw_conv(),
        concat(),
        representation(),
        mld_loss(),
        q_loss(),
        policy_loss(),
        alpha_loss(),
    ]
}
