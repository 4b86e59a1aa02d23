//! The 2.5D axes-swapping network: three residual blocks of 2D convolutions
//! whose channel axis is reoriented to x, y, and z in turn, so convolution
//! sweeps the yz, xz, and xy planes across the volume without any 3D
//! kernels.
//!
//! Orientation convention: a block whose channel axis is `a` holds its data
//! as (a, p, q) with (p, q) the remaining axes in canonical (x, y, z)
//! relative order. The residual is added in the block's own orientation,
//! and the output is reoriented back to canonical axes after the last
//! block.

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Scalar, Tensor, VarId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const BLOCKS: usize = 3;
pub const CONVS_PER_BLOCK: usize = 3;

/// Volume axis used as a block's channel dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn label(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }

    pub fn from_label(c: char) -> Result<Self> {
        match c.to_ascii_lowercase() {
            'x' => Ok(Axis::X),
            'y' => Ok(Axis::Y),
            'z' => Ok(Axis::Z),
            other => Err(Error::InvalidArgument(format!("unknown axis '{other}'"))),
        }
    }
}

/// Parses an order string such as "xyz" or "z-x-y".
pub fn parse_swap_order(s: &str) -> Result<[Axis; 3]> {
    let labels: Vec<char> = s.chars().filter(|c| *c != '-').collect();
    if labels.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "swap order must name three axes, got '{s}'"
        )));
    }
    let order = [
        Axis::from_label(labels[0])?,
        Axis::from_label(labels[1])?,
        Axis::from_label(labels[2])?,
    ];
    if order[0] == order[1] || order[0] == order[2] || order[1] == order[2] {
        return Err(Error::InvalidArgument(format!(
            "swap order must be a permutation of x, y, z, got '{s}'"
        )));
    }
    Ok(order)
}

pub fn swap_order_label(order: &[Axis; 3]) -> String {
    order.iter().map(|a| a.label()).collect()
}

/// Network variant: the swap network proper, or the ablation without
/// inter-block reorientation (all blocks share the first channel axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Swap,
    NonSwap,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Swap => "swap",
            Variant::NonSwap => "non_swap",
        }
    }
}

/// Architecture schedule: input extents, per-block channel axes, variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapNetConfig {
    pub extents: (usize, usize, usize),
    pub swap_order: [Axis; 3],
    pub variant: Variant,
}

impl SwapNetConfig {
    pub fn new(
        extents: (usize, usize, usize),
        swap_order: [Axis; 3],
        variant: Variant,
    ) -> Result<Self> {
        let cfg = SwapNetConfig {
            extents,
            swap_order,
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default x-y-z swap network over the given extents.
    pub fn swap_xyz(extents: (usize, usize, usize)) -> Self {
        SwapNetConfig {
            extents,
            swap_order: [Axis::X, Axis::Y, Axis::Z],
            variant: Variant::Swap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, ny, nz) = self.extents;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidArgument("extents must be >= 1".into()));
        }
        let o = &self.swap_order;
        if o[0] == o[1] || o[0] == o[2] || o[1] == o[2] {
            return Err(Error::InvalidArgument(
                "swap order must be a permutation of x, y, z".into(),
            ));
        }
        Ok(())
    }

    fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.extents.0,
            Axis::Y => self.extents.1,
            Axis::Z => self.extents.2,
        }
    }

    /// Channel axis of one block. The non-swap ablation keeps every block on
    /// the first axis of the order.
    pub fn block_channel_axis(&self, block: usize) -> Axis {
        match self.variant {
            Variant::Swap => self.swap_order[block],
            Variant::NonSwap => self.swap_order[0],
        }
    }

    /// Channel count of one block: the extent of its channel axis.
    pub fn block_channels(&self, block: usize) -> usize {
        self.extent(self.block_channel_axis(block))
    }
}

/// Learnable parameters: per block, three 3x3 kernels and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub kernels: Vec<Tensor<T>>,
    pub biases: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapNetWeights<T> {
    pub blocks: Vec<BlockWeights<T>>,
}

impl<T: Scalar> SwapNetWeights<T> {
    /// All-zero weights: the network then acts as the identity map.
    pub fn zeros(cfg: &SwapNetConfig) -> Self {
        let blocks = (0..BLOCKS)
            .map(|b| {
                let c = cfg.block_channels(b);
                BlockWeights {
                    kernels: (0..CONVS_PER_BLOCK)
                        .map(|_| Tensor::zeros(vec![c, c, 3, 3]))
                        .collect(),
                    biases: (0..CONVS_PER_BLOCK)
                        .map(|_| Tensor::zeros(vec![c]))
                        .collect(),
                }
            })
            .collect();
        SwapNetWeights { blocks }
    }

    /// Number of scalars across all kernels and biases.
    pub fn parameter_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| {
                b.kernels.iter().map(|k| k.numel()).sum::<usize>()
                    + b.biases.iter().map(|v| v.numel()).sum::<usize>()
            })
            .sum()
    }

    /// Parameters in declaration order: per block, per conv, kernel then bias.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(BLOCKS * CONVS_PER_BLOCK * 2);
        for block in &self.blocks {
            for (k, b) in block.kernels.iter().zip(&block.biases) {
                out.push(k);
                out.push(b);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(BLOCKS * CONVS_PER_BLOCK * 2);
        for block in &mut self.blocks {
            for (k, b) in block.kernels.iter_mut().zip(block.biases.iter_mut()) {
                out.push(k);
                out.push(b);
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> SwapNetWeights<U> {
        SwapNetWeights {
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockWeights {
                    kernels: b.kernels.iter().map(|k| k.cast()).collect(),
                    biases: b.biases.iter().map(|v| v.cast()).collect(),
                })
                .collect(),
        }
    }
}

/// Kaiming fan-in scaled normal kernels (std^2 = 2 / (C * 9)) with zero
/// biases; deterministic per seed.
pub fn init_weights(cfg: &SwapNetConfig, seed: u64) -> SwapNetWeights<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = (0..BLOCKS)
        .map(|b| {
            let c = cfg.block_channels(b);
            let std = (2.0 / (c as f64 * 9.0)).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive");
            BlockWeights {
                kernels: (0..CONVS_PER_BLOCK)
                    .map(|_| {
                        let data: Vec<f32> = (0..c * c * 9)
                            .map(|_| normal.sample(&mut rng) as f32)
                            .collect();
                        Tensor::new(vec![c, c, 3, 3], data).expect("consistent")
                    })
                    .collect(),
                biases: (0..CONVS_PER_BLOCK)
                    .map(|_| Tensor::zeros(vec![c]))
                    .collect(),
            }
        })
        .collect();
    SwapNetWeights { blocks }
}

/// Closed-form parameter count: sum over blocks of 3 * (9 C^2 + C).
pub fn parameter_count(cfg: &SwapNetConfig) -> usize {
    (0..BLOCKS)
        .map(|b| {
            let c = cfg.block_channels(b);
            CONVS_PER_BLOCK * (9 * c * c + c)
        })
        .sum()
}

/// Axis labels of a block orientation: channel axis first, the remaining
/// axes in canonical relative order.
fn orientation_for(channel: Axis) -> [Axis; 3] {
    match channel {
        Axis::X => [Axis::X, Axis::Y, Axis::Z],
        Axis::Y => [Axis::Y, Axis::X, Axis::Z],
        Axis::Z => [Axis::Z, Axis::X, Axis::Y],
    }
}

/// Permutation taking a tensor whose axes carry labels `from` into label
/// order `to` (usable with [`Tensor::permute_axes`]).
fn permutation_between(from: &[Axis; 3], to: &[Axis; 3]) -> [usize; 3] {
    let mut order = [0usize; 3];
    for (slot, target) in order.iter_mut().zip(to) {
        *slot = from
            .iter()
            .position(|a| a == target)
            .expect("orientations share the same axis set");
    }
    order
}

/// Identifiers of the recorded network: output node plus parameter leaves in
/// declaration order (kernel, bias per conv), for gradient collection.
pub struct RecordedNet {
    pub input: VarId,
    pub output: VarId,
    pub param_ids: Vec<VarId>,
}

/// Records the network on a graph. The input tensor must carry canonical
/// (x, y, z) axes matching `cfg.extents`; the output does too.
pub fn forward_graph<T: Scalar>(
    cfg: &SwapNetConfig,
    weights: &SwapNetWeights<T>,
    graph: &mut Graph<T>,
    input: Tensor<T>,
) -> Result<RecordedNet> {
    cfg.validate()?;
    let (nx, ny, nz) = cfg.extents;
    if input.shape() != [nx, ny, nz] {
        return Err(Error::shape_mismatch(
            "network input extents",
            input.shape(),
            &[nx, ny, nz],
        ));
    }
    if weights.blocks.len() != BLOCKS {
        return Err(Error::shape_mismatch(
            "network blocks",
            &weights.blocks.len(),
            &BLOCKS,
        ));
    }

    let input_id = graph.leaf(input);
    let mut h = input_id;
    let mut current = [Axis::X, Axis::Y, Axis::Z];
    let mut param_ids = Vec::with_capacity(BLOCKS * CONVS_PER_BLOCK * 2);

    for (block_idx, block) in weights.blocks.iter().enumerate() {
        let target = orientation_for(cfg.block_channel_axis(block_idx));
        if current != target {
            h = graph.permute_axes(h, &permutation_between(&current, &target))?;
            current = target;
        }
        let block_input = h;
        for conv in 0..CONVS_PER_BLOCK {
            let k = graph.leaf(block.kernels[conv].clone());
            let b = graph.leaf(block.biases[conv].clone());
            param_ids.push(k);
            param_ids.push(b);
            h = graph.conv2d(h, k, b)?;
            if conv + 1 < CONVS_PER_BLOCK {
                h = graph.relu(h);
            }
        }
        h = graph.add(h, block_input)?;
    }

    let canonical = [Axis::X, Axis::Y, Axis::Z];
    if current != canonical {
        h = graph.permute_axes(h, &permutation_between(&current, &canonical))?;
    }
    Ok(RecordedNet {
        input: input_id,
        output: h,
        param_ids,
    })
}

/// Plain inference: runs the network and returns the output tensor.
pub fn forward<T: Scalar>(
    cfg: &SwapNetConfig,
    weights: &SwapNetWeights<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut graph = Graph::new();
    let net = forward_graph(cfg, weights, &mut graph, input.clone())?;
    Ok(graph.value(net.output).clone())
}

/// Collects the parameter gradients of a recorded network in declaration
/// order, aligned with [`SwapNetWeights::params`].
pub fn parameter_gradients<'g, T: Scalar>(
    grads: &'g Gradients<T>,
    net: &RecordedNet,
) -> Vec<&'g Tensor<T>> {
    net.param_ids.iter().map(|&id| grads.wrt(id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(extents: (usize, usize, usize), seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = extents.0 * extents.1 * extents.2;
        Tensor::new(
            vec![extents.0, extents.1, extents.2],
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn random_weights(cfg: &SwapNetConfig, seed: u64) -> SwapNetWeights<f64> {
        init_weights(cfg, seed).cast()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = SwapNetConfig::swap_xyz((8, 8, 8));
        let a = init_weights(&cfg, 3);
        let b = init_weights(&cfg, 3);
        assert_eq!(a, b);
        for block in &a.blocks {
            for bias in &block.biases {
                assert!(bias.data().iter().all(|&v| v == 0.0));
            }
        }
        let c = init_weights(&cfg, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn init_variance_matches_fan_in_scaling() {
        let cfg = SwapNetConfig::swap_xyz((32, 32, 32));
        let w = init_weights(&cfg, 5);
        let kernel = &w.blocks[0].kernels[0];
        let n = kernel.numel() as f64;
        let mean: f64 = kernel.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = kernel
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let expect = 2.0 / (32.0 * 9.0);
        assert!(
            (var - expect).abs() / expect < 0.10,
            "sample variance {var} vs {expect}"
        );
    }

    #[test]
    fn forward_preserves_shape_for_all_orders_and_noncubic_extents() {
        let extents = (4, 5, 6);
        for order in ["xyz", "zxy", "xzy", "yzx", "yxz", "zyx"] {
            let cfg =
                SwapNetConfig::new(extents, parse_swap_order(order).unwrap(), Variant::Swap)
                    .unwrap();
            let w = random_weights(&cfg, 7);
            let out = forward(&cfg, &w, &random_input(extents, 8)).unwrap();
            assert_eq!(out.shape(), &[4, 5, 6], "order {order}");
        }
        let cfg =
            SwapNetConfig::new(extents, parse_swap_order("yxz").unwrap(), Variant::NonSwap)
                .unwrap();
        let w = random_weights(&cfg, 9);
        let out = forward(&cfg, &w, &random_input(extents, 10)).unwrap();
        assert_eq!(out.shape(), &[4, 5, 6]);
    }

    #[test]
    fn zero_weights_make_the_exact_identity() {
        for variant in [Variant::Swap, Variant::NonSwap] {
            let cfg =
                SwapNetConfig::new((6, 7, 8), parse_swap_order("zxy").unwrap(), variant).unwrap();
            let w = SwapNetWeights::<f64>::zeros(&cfg);
            let input = random_input((6, 7, 8), 11);
            let out = forward(&cfg, &w, &input).unwrap();
            assert_eq!(out, input, "variant {variant:?}");
        }
    }

    #[test]
    fn parameter_count_examples() {
        // Cubic 448: 9 * (9 * 448^2 + 448).
        let cfg = SwapNetConfig::swap_xyz((448, 448, 448));
        assert_eq!(parameter_count(&cfg), 16_261_056);
        // Cubic 1: 9 * (9 + 1).
        let cfg = SwapNetConfig::swap_xyz((1, 1, 1));
        assert_eq!(parameter_count(&cfg), 90);
        // Non-cubic, channels tied to the block's channel axis:
        // 3*(9*64+8) + 3*(9*256+16) + 3*(9*1024+32).
        let cfg = SwapNetConfig::swap_xyz((8, 16, 32));
        assert_eq!(parameter_count(&cfg), 1752 + 6960 + 27_744);
        assert_eq!(parameter_count(&cfg), 36_456);
    }

    #[test]
    fn parameter_count_matches_actual_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let extents = (
                rng.gen_range(1..12),
                rng.gen_range(1..12),
                rng.gen_range(1..12),
            );
            let orders = ["xyz", "zxy", "xzy"];
            let order = parse_swap_order(orders[rng.gen_range(0..3)]).unwrap();
            let variant = if rng.gen_bool(0.5) {
                Variant::Swap
            } else {
                Variant::NonSwap
            };
            let cfg = SwapNetConfig::new(extents, order, variant).unwrap();
            let w = init_weights(&cfg, 1);
            assert_eq!(w.parameter_count(), parameter_count(&cfg), "{cfg:?}");
        }
    }

    #[test]
    fn non_swap_matches_swap_count_on_cubic_inputs() {
        let swap = SwapNetConfig::swap_xyz((16, 16, 16));
        let non = SwapNetConfig::new(
            (16, 16, 16),
            [Axis::X, Axis::Y, Axis::Z],
            Variant::NonSwap,
        )
        .unwrap();
        assert_eq!(parameter_count(&swap), parameter_count(&non));
    }

    #[test]
    fn extent_mismatch_rejected() {
        let cfg = SwapNetConfig::swap_xyz((4, 5, 6));
        let w = random_weights(&cfg, 13);
        let bad = random_input((5, 4, 6), 14);
        assert!(forward(&cfg, &w, &bad).is_err());
    }

    /// Index-tracking oracle: the full forward must equal per-block plain
    /// conv cores wrapped in independently-derived axis permutations.
    #[test]
    fn swap_bookkeeping_matches_index_tracking_oracle() {
        let extents = (4, 5, 6);
        for order_s in ["xyz", "zxy", "xzy"] {
            let order = parse_swap_order(order_s).unwrap();
            let cfg = SwapNetConfig::new(extents, order, Variant::Swap).unwrap();
            let w = random_weights(&cfg, 15);
            let input = random_input(extents, 16);
            let fast = forward(&cfg, &w, &input).unwrap();

            // Oracle: track axis labels by hand. A tensor in label order L
            // is permuted into the block orientation via the index map
            // new[k] = position of target label k in L.
            let mut labels = ['x', 'y', 'z'];
            let mut t = input;
            for (b, block) in w.blocks.iter().enumerate() {
                let channel = order[b].label();
                let target = match channel {
                    'x' => ['x', 'y', 'z'],
                    'y' => ['y', 'x', 'z'],
                    _ => ['z', 'x', 'y'],
                };
                let perm: Vec<usize> = target
                    .iter()
                    .map(|c| labels.iter().position(|l| l == c).unwrap())
                    .collect();
                t = t.permute_axes(&perm).unwrap();
                labels = target;
                // Plain block core: conv/relu/conv/relu/conv + residual.
                let mut g = Graph::<f64>::new();
                let x = g.leaf(t.clone());
                let mut h = x;
                for conv in 0..CONVS_PER_BLOCK {
                    let k = g.leaf(block.kernels[conv].clone());
                    let bias = g.leaf(block.biases[conv].clone());
                    h = g.conv2d(h, k, bias).unwrap();
                    if conv + 1 < CONVS_PER_BLOCK {
                        h = g.relu(h);
                    }
                }
                let out = g.add(h, x).unwrap();
                t = g.value(out).clone();
            }
            let perm: Vec<usize> = ['x', 'y', 'z']
                .iter()
                .map(|c| labels.iter().position(|l| l == c).unwrap())
                .collect();
            t = t.permute_axes(&perm).unwrap();

            let max_err = fast
                .data()
                .iter()
                .zip(t.data())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(max_err <= 1e-6, "order {order_s}: max deviation {max_err}");
        }
    }

    /// Spot finite-difference check of the end-to-end gradient; the full
    /// 200-coordinate sweep lives in the acceptance suite.
    #[test]
    fn full_network_gradient_matches_finite_differences() {
        let cfg = SwapNetConfig::swap_xyz((5, 5, 5));
        let weights = random_weights(&cfg, 17);
        let input = random_input((5, 5, 5), 18);
        let target = random_input((5, 5, 5), 19);

        let loss_of = |w: &SwapNetWeights<f64>| -> f64 {
            let mut g = Graph::new();
            let net = forward_graph(&cfg, w, &mut g, input.clone()).unwrap();
            let t = g.leaf(target.clone());
            let loss = g.mse(net.output, t).unwrap();
            g.value(loss).scalar_value().unwrap()
        };

        let mut g = Graph::new();
        let net = forward_graph(&cfg, &weights, &mut g, input.clone()).unwrap();
        let t = g.leaf(target.clone());
        let loss = g.mse(net.output, t).unwrap();
        let grads = g.backward(loss).unwrap();
        let param_grads = parameter_gradients(&grads, &net);

        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..12 {
            let p_idx = rng.gen_range(0..param_grads.len());
            let (block, within) = (p_idx / 6, p_idx % 6);
            let is_kernel = within % 2 == 0;
            let conv = within / 2;
            let tensor_len = if is_kernel {
                weights.blocks[block].kernels[conv].numel()
            } else {
                weights.blocks[block].biases[conv].numel()
            };
            let coord = rng.gen_range(0..tensor_len);

            let mut plus = weights.clone();
            let mut minus = weights.clone();
            {
                let (pt, mt) = if is_kernel {
                    (
                        &mut plus.blocks[block].kernels[conv],
                        &mut minus.blocks[block].kernels[conv],
                    )
                } else {
                    (
                        &mut plus.blocks[block].biases[conv],
                        &mut minus.blocks[block].biases[conv],
                    )
                };
                pt.data_mut()[coord] += h;
                mt.data_mut()[coord] -= h;
            }
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let an = param_grads[p_idx].data()[coord];
            assert!(
                (fd - an).abs() <= 1e-3 * fd.abs().max(1e-8),
                "param {p_idx} coord {coord}: fd {fd} vs analytic {an}"
            );
        }
    }
}
