//! Central finite-difference checks of the analytic gradients.
//!
//! Everything runs in `f64`: networks are cast up, the scalar loss is a fixed
//! random projection `Σ rᵢ·yᵢ` of the output, and each checked coordinate is
//! compared with `(L(θ + h) − L(θ − h)) / 2h`.

use rand::seq::index::sample;
use rand::Rng;

use super::{kernels, LayerSpec, Mode, Network, Tensor};
use crate::{seed, Result};

pub const DEFAULT_STEP: f64 = 1e-3;
/// Step for whole-network checks. Wide rectifier stacks put some unit
/// within `1e-3` of its kink for almost every coordinate.
pub const COMPOSED_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
/// Below this magnitude both gradients count as zero and the error is absolute.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance && self.checked > 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn projection(shape: &[usize], seed_value: u64) -> Tensor<f64> {
    let mut rng = seed::stream(seed_value, 77);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn pick(len: usize, max: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, max).into_vec();
        v.sort_unstable();
        v
    }
}

/// Checks input and parameter gradients of one network. At most
/// `max_coords` coordinates are sampled per tensor.
pub fn check_network(
    name: &str,
    net: &Network<f64>,
    input: &Tensor<f64>,
    mode: Mode,
    max_coords: usize,
    step: f64,
    tolerance: f64,
) -> Result<Vec<GradCheck>> {
    let (y, trace) = net.forward(input, mode)?;
    let r = projection(y.shape(), 5);
    let mut analytic = net.clone();
    analytic.zero_grad();
    let gin = analytic.backward(&trace, &r)?;

    let loss =
        |n: &Network<f64>, x: &Tensor<f64>| -> Result<f64> { Ok(dot(&n.forward(x, mode)?.0, &r)) };
    let mut rng = seed::stream(6, 0);
    let mut out = Vec::new();

    let mut x = input.clone();
    let mut worst = 0.0f64;
    let coords = pick(x.len(), max_coords, &mut rng);
    for &i in &coords {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + step;
        let up = loss(net, &x)?;
        x.data_mut()[i] = orig - step;
        let down = loss(net, &x)?;
        x.data_mut()[i] = orig;
        worst = worst.max(relative_error(gin.data()[i], (up - down) / (2.0 * step)));
    }
    out.push(GradCheck {
        name: format!("{name}/input"),
        checked: coords.len(),
        max_rel_error: worst,
        tolerance,
    });

    let mut work = net.clone();
    let grads: Vec<Vec<f64>> = analytic
        .params()
        .map(|p| p.grad().unwrap().to_vec())
        .collect();
    let names: Vec<String> = net
        .named_tensors()
        .into_iter()
        .map(|(n, _)| n)
        .filter(|n| !n.ends_with("running_mean") && !n.ends_with("running_var"))
        .collect();
    for (pi, g) in grads.iter().enumerate() {
        let coords = pick(g.len(), max_coords, &mut rng);
        let mut worst = 0.0f64;
        for &j in &coords {
            let orig = work.params().nth(pi).unwrap().data()[j];
            work.params_mut().nth(pi).unwrap().data_mut()[j] = orig + step;
            let up = loss(&work, input)?;
            work.params_mut().nth(pi).unwrap().data_mut()[j] = orig - step;
            let down = loss(&work, input)?;
            work.params_mut().nth(pi).unwrap().data_mut()[j] = orig;
            worst = worst.max(relative_error(g[j], (up - down) / (2.0 * step)));
        }
        out.push(GradCheck {
            name: format!("{name}/{}", names[pi]),
            checked: coords.len(),
            max_rel_error: worst,
            tolerance,
        });
    }
    Ok(out)
}

/// Checks `L = Σ r·D(G(z))` against `z` and sampled parameters of both
/// networks. Returns one entry each for `z`, the generator and the
/// discriminator.
pub fn check_composed(
    generator: &Network<f64>,
    discriminator: &Network<f64>,
    z: &Tensor<f64>,
    mode: Mode,
    coords: usize,
    step: f64,
    tolerance: f64,
) -> Result<Vec<GradCheck>> {
    let (img, g_trace) = generator.forward(z, mode)?;
    let (prob, d_trace) = discriminator.forward(&img, mode)?;
    let r = projection(prob.shape(), 9);
    let mut ga = generator.clone();
    let mut da = discriminator.clone();
    ga.zero_grad();
    da.zero_grad();
    let d_img = da.backward(&d_trace, &r)?;
    let dz = ga.backward(&g_trace, &d_img)?;

    let loss = |g: &Network<f64>, d: &Network<f64>, z: &Tensor<f64>| -> Result<f64> {
        let img = g.forward(z, mode)?.0;
        Ok(dot(&d.forward(&img, mode)?.0, &r))
    };
    let mut rng = seed::stream(10, 0);

    let mut zw = z.clone();
    let mut worst = 0.0f64;
    let zc = pick(z.len(), coords, &mut rng);
    for &i in &zc {
        let orig = zw.data()[i];
        zw.data_mut()[i] = orig + step;
        let up = loss(generator, discriminator, &zw)?;
        zw.data_mut()[i] = orig - step;
        let down = loss(generator, discriminator, &zw)?;
        zw.data_mut()[i] = orig;
        worst = worst.max(relative_error(dz.data()[i], (up - down) / (2.0 * step)));
    }
    let mut out = vec![GradCheck {
        name: "G∘D/z".into(),
        checked: zc.len(),
        max_rel_error: worst,
        tolerance,
    }];

    // Sample `coords` (tensor, index) pairs spread over all parameters.
    let sample_params =
        |net: &Network<f64>, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<(usize, usize)> {
            let sizes: Vec<usize> = net.params().map(Tensor::len).collect();
            let total: usize = sizes.iter().sum();
            pick(total, coords, rng)
                .into_iter()
                .map(|mut flat| {
                    let mut t = 0;
                    while flat >= sizes[t] {
                        flat -= sizes[t];
                        t += 1;
                    }
                    (t, flat)
                })
                .collect()
        };

    for (label, is_gen) in [("G∘D/generator", true), ("G∘D/discriminator", false)] {
        let analytic = if is_gen { &ga } else { &da };
        let picks = sample_params(analytic, &mut rng);
        let mut g = generator.clone();
        let mut d = discriminator.clone();
        let mut worst = 0.0f64;
        for &(t, j) in &picks {
            let a = analytic.params().nth(t).unwrap().grad().unwrap()[j];
            let target = if is_gen { &mut g } else { &mut d };
            let orig = target.params().nth(t).unwrap().data()[j];
            target.params_mut().nth(t).unwrap().data_mut()[j] = orig + step;
            let up = loss(&g, &d, z)?;
            let target = if is_gen { &mut g } else { &mut d };
            target.params_mut().nth(t).unwrap().data_mut()[j] = orig - step;
            let down = loss(&g, &d, z)?;
            let target = if is_gen { &mut g } else { &mut d };
            target.params_mut().nth(t).unwrap().data_mut()[j] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * step)));
        }
        out.push(GradCheck {
            name: label.into(),
            checked: picks.len(),
            max_rel_error: worst,
            tolerance,
        });
    }
    Ok(out)
}

/// Input whose entries have magnitude in `[0.05, 1]`, away from the
/// activation kinks at zero.
fn kink_free_input(shape: &[usize], seed_value: u64) -> Tensor<f64> {
    let mut rng = seed::stream(seed_value, 1);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// One small network per layer kind, each checked on all its gradients.
pub fn layer_suite(step: f64, tolerance: f64) -> Result<Vec<GradCheck>> {
    let cases: Vec<(&str, Vec<LayerSpec>, Vec<usize>, Mode)> = vec![
        (
            "conv",
            vec![LayerSpec::Conv {
                in_channels: 2,
                out_channels: 3,
            }],
            vec![2, 2, 8, 8],
            Mode::Train,
        ),
        (
            "conv_transpose",
            vec![LayerSpec::ConvTranspose {
                in_channels: 3,
                out_channels: 2,
            }],
            vec![2, 3, 4, 4],
            Mode::Train,
        ),
        (
            "dense",
            vec![LayerSpec::Dense {
                in_features: 6,
                out_features: 4,
            }],
            vec![3, 6],
            Mode::Train,
        ),
        (
            "leaky_relu",
            vec![LayerSpec::LeakyRelu(0.2)],
            vec![3, 8],
            Mode::Train,
        ),
        ("relu", vec![LayerSpec::Relu], vec![3, 8], Mode::Train),
        ("tanh", vec![LayerSpec::Tanh], vec![3, 8], Mode::Train),
        ("sigmoid", vec![LayerSpec::Sigmoid], vec![3, 8], Mode::Train),
        (
            "batch_norm/train",
            vec![LayerSpec::BatchNorm { channels: 3 }],
            vec![4, 3, 2, 2],
            Mode::Train,
        ),
        (
            "batch_norm/eval",
            vec![LayerSpec::BatchNorm { channels: 3 }],
            vec![4, 3, 2, 2],
            Mode::Eval,
        ),
        (
            "batch_norm/features",
            vec![LayerSpec::BatchNorm { channels: 5 }],
            vec![6, 5],
            Mode::Train,
        ),
    ];
    let mut out = Vec::new();
    for (i, (name, specs, shape, mode)) in cases.into_iter().enumerate() {
        let mut net: Network<f64> = Network::new(&specs, &mut seed::stream(20, i as u64))?;
        // Larger weights than the training init so gradients are well above the floor.
        for p in net.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= 25.0);
        }
        if let LayerSpec::BatchNorm { .. } = specs[0] {
            let mut rng = seed::stream(21, i as u64);
            let layer = &mut net.layers_mut()[0];
            for t in layer.params.iter_mut().chain(layer.buffers.iter_mut()) {
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v += rng.random_range(0.1..0.9));
            }
        }
        let x = kink_free_input(&shape, 30 + i as u64);
        out.extend(check_network(name, &net, &x, mode, 64, step, tolerance)?);
    }
    Ok(out)
}

/// Largest relative gap `|⟨conv(x), y⟩ − ⟨x, conv_transpose(y)⟩|` over a few
/// random `f32` shapes, with inner products accumulated in `f64`.
pub fn adjoint_gap(seed_value: u64) -> Result<f64> {
    let mut rng = seed::stream(seed_value, 3);
    let mut rand = |shape: &[usize]| -> Result<Tensor<f32>> {
        let n = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )
    };
    let mut worst = 0.0f64;
    for &(b, c1, c2, h) in &[(1, 1, 1, 8), (2, 3, 4, 6), (2, 8, 5, 16), (1, 16, 32, 32)] {
        let x = rand(&[b, c1, h, h])?;
        let w = rand(&[c2, c1, 4, 4])?;
        let y = rand(&[b, c2, h / 2, h / 2])?;
        let dot32 = |a: &Tensor<f32>, b: &Tensor<f32>| -> f64 {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&p, &q)| f64::from(p) * f64::from(q))
                .sum()
        };
        let lhs = dot32(&kernels::conv2d(&x, &w, &Tensor::zeros(&[c2]))?, &y);
        let rhs = dot32(
            &x,
            &kernels::conv_transpose2d(&y, &w, &Tensor::zeros(&[c1]))?,
        );
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    Ok(worst)
}
