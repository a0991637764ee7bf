use rand::Rng;

use super::assign::{assign_random_operators, AttentionAssignment};
use super::{AttentionMode, NetworkConfig, EXPANSION, STAGE_WIDTHS, STEM_CHANNELS};
use crate::attention::{
    baseline_forward, sem_forward, AttentionOverride, Baseline, DecisionMode, SemConfig, SemParams,
    SemVars,
};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::rng::RngState;
use crate::tensor::{Element, Tensor};

/// Attention module attached to one residual block.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockAttention {
    None,
    Sem(SemConfig),
    Baseline(Baseline),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockInfo {
    /// Position among all blocks, starting at 0.
    pub index: usize,
    /// Stage number, 1 to 3.
    pub stage: usize,
    pub in_channels: usize,
    pub planes: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub attention: BlockAttention,
}

#[derive(Debug, Clone, Copy)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone, Copy, Default)]
struct SemIds {
    w_d: Option<ParamId>,
    d_bias: Option<ParamId>,
    w1: Option<ParamId>,
    w2: Option<ParamId>,
    eca_kernel: Option<ParamId>,
    ie_gamma: Option<ParamId>,
    ie_beta: Option<ParamId>,
}

#[derive(Debug, Clone)]
struct Block {
    info: BlockInfo,
    bn1: BnIds,
    conv1: ParamId,
    bn2: BnIds,
    conv2: ParamId,
    bn3: BnIds,
    conv3: ParamId,
    shortcut: Option<ParamId>,
    attn: SemIds,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub train: bool,
    pub overrides: AttentionOverride,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self {
            train: true,
            overrides: AttentionOverride::None,
        }
    }

    pub fn eval() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Graph handle of every store entry (`None` for buffers).
    pub param_vars: Vec<Option<Var>>,
    /// Output of the stem, every block, and the pooled features, with names.
    pub activations: Vec<(String, Var)>,
    /// Decision vector per block, when that block runs a decision network.
    pub decisions: Vec<Option<Var>>,
}

/// A pre-activation bottleneck ResNet and its parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: NetworkConfig,
    pub store: ParamStore<T>,
    pub assignment: Option<AttentionAssignment>,
    stem: ParamId,
    blocks: Vec<Block>,
    final_bn: BnIds,
    fc_w: ParamId,
    fc_b: ParamId,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

struct Builder<T> {
    store: ParamStore<T>,
    rng: RngState,
}

impl<T: Element> Builder<T> {
    fn trainable(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.store.add(name, value, ParamKind::Trainable)
    }

    /// He-uniform: variance 2 / fan_in.
    fn conv(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize) -> Result<ParamId> {
        let fan_in = in_ch * k * k;
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = self.rng.derive(name_hash(name)).rng();
        let data = (0..out_ch * fan_in)
            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
            .collect();
        self.trainable(name, Tensor::new([out_ch, in_ch, k, k], data)?)
    }

    fn bn(&mut self, prefix: &str, channels: usize) -> Result<BnIds> {
        Ok(BnIds {
            gamma: self.trainable(&format!("{prefix}.gamma"), Tensor::ones([channels]))?,
            beta: self.trainable(&format!("{prefix}.beta"), Tensor::zeros([channels]))?,
            mean: self.store.add(
                format!("{prefix}.running_mean"),
                Tensor::zeros([channels]),
                ParamKind::Buffer,
            )?,
            var: self.store.add(
                format!("{prefix}.running_var"),
                Tensor::ones([channels]),
                ParamKind::Buffer,
            )?,
        })
    }

    fn attention(&mut self, prefix: &str, channels: usize, cfg: &SemConfig) -> Result<SemIds> {
        let params = SemParams::<T>::init(channels, cfg, self.rng.derive(name_hash(prefix)))?;
        let mut ids = SemIds::default();
        for (name, tensor) in params.named() {
            let id = Some(self.trainable(&format!("{prefix}.{name}"), tensor.clone())?);
            match name {
                "w_d" => ids.w_d = id,
                "d_bias" => ids.d_bias = id,
                "fc.w1" => ids.w1 = id,
                "fc.w2" => ids.w2 = id,
                "eca.kernel" => ids.eca_kernel = id,
                "ie.gamma" => ids.ie_gamma = id,
                "ie.beta" => ids.ie_beta = id,
                _ => unreachable!("unknown attention tensor {name}"),
            }
        }
        Ok(ids)
    }
}

fn block_attention(
    cfg: &NetworkConfig,
    assignment: Option<&AttentionAssignment>,
    index: usize,
) -> BlockAttention {
    let sem = |ops, decision| {
        BlockAttention::Sem(SemConfig {
            ops,
            reduction: cfg.reduction,
            activation: cfg.switch_activation,
            decision,
            decision_bias: false,
            eca: cfg.eca,
            kernel_override: None,
        })
    };
    match cfg.attention {
        AttentionMode::None => BlockAttention::None,
        AttentionMode::Baseline(b) => BlockAttention::Baseline(b),
        AttentionMode::Sem => sem(cfg.operator_set.clone(), cfg.decision),
        AttentionMode::RandomSingle(_) | AttentionMode::RandomDouble(_) => {
            let ops = assignment
                .expect("assignment drawn for random modes")
                .blocks[index]
                .clone();
            sem(ops, DecisionMode::Fixed)
        }
    }
}

/// Build a network with freshly initialized parameters.
///
/// Each tensor draws from a stream derived from its name, so two networks
/// built from the same `rng` share every tensor they have in common.
pub fn build_network<T: Element>(cfg: &NetworkConfig, rng: RngState) -> Result<Model<T>> {
    cfg.validate()?;
    let n = cfg.blocks_per_stage()?;
    let assignment = match cfg.attention {
        AttentionMode::RandomSingle(seed) => Some(assign_random_operators(3 * n, 1, seed)?),
        AttentionMode::RandomDouble(seed) => Some(assign_random_operators(3 * n, 2, seed)?),
        _ => None,
    };
    let mut b = Builder {
        store: ParamStore::new(),
        rng,
    };
    let stem = b.conv("stem.conv", STEM_CHANNELS, 3, 3)?;
    let mut blocks = Vec::with_capacity(3 * n);
    let mut in_ch = STEM_CHANNELS;
    for (s, &planes) in STAGE_WIDTHS.iter().enumerate() {
        for j in 0..n {
            let index = blocks.len();
            let stride = if s > 0 && j == 0 { 2 } else { 1 };
            let out_ch = planes * EXPANSION;
            let p = format!("s{}.b{j}", s + 1);
            let info = BlockInfo {
                index,
                stage: s + 1,
                in_channels: in_ch,
                planes,
                out_channels: out_ch,
                stride,
                attention: block_attention(cfg, assignment.as_ref(), index),
            };
            let bn1 = b.bn(&format!("{p}.bn1"), in_ch)?;
            let conv1 = b.conv(&format!("{p}.conv1"), planes, in_ch, 1)?;
            let bn2 = b.bn(&format!("{p}.bn2"), planes)?;
            let conv2 = b.conv(&format!("{p}.conv2"), planes, planes, 3)?;
            let bn3 = b.bn(&format!("{p}.bn3"), planes)?;
            let conv3 = b.conv(&format!("{p}.conv3"), out_ch, planes, 1)?;
            let shortcut = if stride != 1 || in_ch != out_ch {
                Some(b.conv(&format!("{p}.shortcut"), out_ch, in_ch, 1)?)
            } else {
                None
            };
            let attn = match &info.attention {
                BlockAttention::None => SemIds::default(),
                BlockAttention::Sem(sc) => b.attention(&format!("{p}.attn"), out_ch, sc)?,
                BlockAttention::Baseline(kind) => b.attention(
                    &format!("{p}.attn"),
                    out_ch,
                    &kind.config(cfg.reduction, cfg.eca),
                )?,
            };
            blocks.push(Block {
                info,
                bn1,
                conv1,
                bn2,
                conv2,
                bn3,
                conv3,
                shortcut,
                attn,
            });
            in_ch = out_ch;
        }
    }
    let final_bn = b.bn("final_bn", in_ch)?;
    let bound = 1.0 / (in_ch as f64).sqrt();
    let mut rng = b.rng.derive(name_hash("fc.weight")).rng();
    let fc_data = (0..cfg.num_classes * in_ch)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    let fc_w = b.trainable("fc.weight", Tensor::new([cfg.num_classes, in_ch], fc_data)?)?;
    let fc_b = b.trainable("fc.bias", Tensor::zeros([cfg.num_classes]))?;
    Ok(Model {
        config: cfg.clone(),
        store: b.store,
        assignment,
        stem,
        blocks,
        final_bn,
        fc_w,
        fc_b,
    })
}

impl<T: Element> Model<T> {
    pub fn blocks(&self) -> impl Iterator<Item = &BlockInfo> {
        self.blocks.iter().map(|b| &b.info)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Trainable parameters belonging to attention modules.
    pub fn attention_params(&self) -> usize {
        self.store
            .entries()
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable && e.name.contains(".attn."))
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn has_decisions(&self) -> bool {
        self.blocks.iter().any(|b| b.attn.w_d.is_some())
    }

    fn batch_norm(
        &mut self,
        g: &mut Graph<T>,
        x: Var,
        ids: BnIds,
        vars: &[Option<Var>],
        train: bool,
    ) -> Result<Var> {
        let mut mean = self.store.get(ids.mean).clone();
        let mut var = self.store.get(ids.var).clone();
        let y = g.batch_norm(
            x,
            vars[ids.gamma.index()].expect("trainable"),
            vars[ids.beta.index()].expect("trainable"),
            &mut mean,
            &mut var,
            train,
        )?;
        if train {
            *self.store.get_mut(ids.mean) = mean;
            *self.store.get_mut(ids.var) = var;
        }
        Ok(y)
    }

    /// Record the forward pass on `g`. In training mode the batch-norm
    /// running statistics in the store are updated.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        x: Var,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        let vars = self.store.bind(g, opts.train);
        let v = |id: ParamId| vars[id.index()].expect("trainable parameter bound");
        let mut activations = Vec::with_capacity(self.blocks.len() + 2);
        let mut decisions = Vec::with_capacity(self.blocks.len());

        let mut h = g.conv2d(x, v(self.stem), 1, 1)?;
        activations.push(("stem".to_string(), h));
        let blocks = self.blocks.clone();
        for blk in &blocks {
            let pre = self.batch_norm(g, h, blk.bn1, &vars, opts.train)?;
            let pre = g.relu(pre);
            let mut out = g.conv2d(pre, v(blk.conv1), 1, 0)?;
            out = self.batch_norm(g, out, blk.bn2, &vars, opts.train)?;
            out = g.relu(out);
            out = g.conv2d(out, v(blk.conv2), blk.info.stride, 1)?;
            out = self.batch_norm(g, out, blk.bn3, &vars, opts.train)?;
            out = g.relu(out);
            out = g.conv2d(out, v(blk.conv3), 1, 0)?;

            let sem_vars = blk.attn.vars(&vars);
            let mut decision = None;
            out = match &blk.info.attention {
                BlockAttention::None => out,
                BlockAttention::Sem(cfg) => {
                    let res = sem_forward(g, out, &sem_vars, cfg, opts.overrides)?;
                    decision = res.w;
                    res.x_att
                }
                BlockAttention::Baseline(kind) => match opts.overrides {
                    AttentionOverride::UnitAttention => out,
                    _ => baseline_forward(g, out, *kind, &sem_vars)?,
                },
            };
            decisions.push(decision);

            // the projection shortcut reads the raw block input
            let skip = match blk.shortcut {
                Some(k) => g.conv2d(h, v(k), blk.info.stride, 0)?,
                None => h,
            };
            h = g.add(out, skip)?;
            activations.push((format!("block{}(s{})", blk.info.index, blk.info.stage), h));
        }
        let fb = self.final_bn;
        h = self.batch_norm(g, h, fb, &vars, opts.train)?;
        h = g.relu(h);
        let pooled = g.global_avg_pool(h)?;
        let batch = g.shape(pooled)[0];
        let width = g.shape(pooled)[1];
        let pooled = g.reshape(pooled, [batch, width])?;
        activations.push(("pool".to_string(), pooled));
        let logits = g.affine(pooled, v(self.fc_w), Some(v(self.fc_b)))?;
        activations.push(("logits".to_string(), logits));
        Ok(ForwardOutput {
            logits,
            param_vars: vars,
            activations,
            decisions,
        })
    }
}

impl SemIds {
    fn vars(&self, vars: &[Option<Var>]) -> SemVars {
        let pick = |id: Option<ParamId>| id.and_then(|id| vars[id.index()]);
        SemVars {
            w_d: pick(self.w_d),
            d_bias: pick(self.d_bias),
            w1: pick(self.w1),
            w2: pick(self.w2),
            eca_kernel: pick(self.eca_kernel),
            ie_gamma: pick(self.ie_gamma),
            ie_beta: pick(self.ie_beta),
        }
    }
}
