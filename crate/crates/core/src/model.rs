//! The five networks: 2D encoder, 3D encoder, shared decoder, pose
//! generator, and domain discriminator, all built from linear residual
//! blocks (linear → batchnorm → ReLU → dropout, twice, plus skip).
//!
//! Forward passes are recorded on a [`Tape`](crate::graph::Tape). Callers
//! first `bind` the parameters onto a tape (one leaf per tensor, in the
//! canonical visit order), then chain the per-network forward methods.

use crate::error::{Error, Result};
use crate::graph::{BatchNormState, NodeId, Phase, Tape};
use crate::rng::Rng;
use crate::scalar::{real, Real};
use crate::skeleton::JointSet;
use crate::tensor::Tensor;

/// Hidden widths of the discriminator's two inner layers.
pub const DISC_WIDTHS: (usize, usize) = (512, 1024);

/// Full architecture (generator consumes pose ⊕ latent) or the
/// generator-only ablation baseline (generator consumes the pose alone,
/// through a narrower input layer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Full,
    Baseline,
}

impl ArchKind {
    pub fn code(self) -> u8 {
        match self {
            ArchKind::Full => 0,
            ArchKind::Baseline => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ArchKind::Full),
            1 => Ok(ArchKind::Baseline),
            other => Err(Error::Checkpoint(format!(
                "unknown architecture code {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<R: Real> {
    pub w: Tensor<R>,
    pub b: Tensor<R>,
}

impl<R: Real> LinearParams<R> {
    /// Fan-in-scaled normal weights, zero bias.
    fn he(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let sigma = real::<R>((2.0 / inputs as f64).sqrt());
        LinearParams {
            w: Tensor::randn(vec![inputs, outputs], sigma, rng),
            b: Tensor::zeros(vec![outputs]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<R: Real> {
    pub gamma: Tensor<R>,
    pub beta: Tensor<R>,
    pub state: BatchNormState<R>,
}

impl<R: Real> BnParams<R> {
    fn new(width: usize) -> Self {
        BnParams {
            gamma: Tensor::full(vec![width], R::one()),
            beta: Tensor::zeros(vec![width]),
            state: BatchNormState::new(width),
        }
    }
}

/// One linear residual block of width w.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlockParams<R: Real> {
    pub fc1: LinearParams<R>,
    pub bn1: BnParams<R>,
    pub fc2: LinearParams<R>,
    pub bn2: BnParams<R>,
}

impl<R: Real> ResBlockParams<R> {
    fn new(width: usize, rng: &mut Rng) -> Self {
        ResBlockParams {
            fc1: LinearParams::he(width, width, rng),
            bn1: BnParams::new(width),
            fc2: LinearParams::he(width, width, rng),
            bn2: BnParams::new(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<R: Real> {
    pub input: LinearParams<R>,
    pub blocks: Vec<ResBlockParams<R>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<R: Real> {
    pub block: ResBlockParams<R>,
    pub output: LinearParams<R>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<R: Real> {
    pub input: LinearParams<R>,
    pub block: ResBlockParams<R>,
    pub output: LinearParams<R>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams<R: Real> {
    pub fc1: LinearParams<R>,
    pub fc2: LinearParams<R>,
    pub fc3: LinearParams<R>,
}

/// Which parameters an optimizer group covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Encoders, decoder, and generator — everything the main objective
    /// trains.
    Main,
    /// Generator only (baseline training).
    Generator,
    /// Discriminator only.
    Discriminator,
    All,
}

impl ParamGroup {
    fn admits(self, name: &str) -> bool {
        match self {
            ParamGroup::All => true,
            ParamGroup::Main => !name.starts_with("disc."),
            ParamGroup::Generator => name.starts_with("generator."),
            ParamGroup::Discriminator => name.starts_with("disc."),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub w: NodeId,
    pub b: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundBlock {
    pub fc1: BoundLinear,
    pub bn1_gamma: NodeId,
    pub bn1_beta: NodeId,
    pub fc2: BoundLinear,
    pub bn2_gamma: NodeId,
    pub bn2_beta: NodeId,
}

#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub input: BoundLinear,
    pub blocks: Vec<BoundBlock>,
}

#[derive(Debug, Clone)]
pub struct BoundDecoder {
    pub block: BoundBlock,
    pub output: BoundLinear,
}

#[derive(Debug, Clone)]
pub struct BoundGenerator {
    pub input: BoundLinear,
    pub block: BoundBlock,
    pub output: BoundLinear,
}

#[derive(Debug, Clone)]
pub struct BoundDiscriminator {
    pub fc1: BoundLinear,
    pub fc2: BoundLinear,
    pub fc3: BoundLinear,
}

/// Tape leaves for every trainable tensor, in the canonical visit order.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub enc2d: BoundEncoder,
    pub enc3d: BoundEncoder,
    pub decoder: BoundDecoder,
    pub generator: BoundGenerator,
    pub discriminator: BoundDiscriminator,
}

/// The complete model: metadata plus the five networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<R: Real> {
    pub joints: usize,
    pub width: usize,
    pub dropout: R,
    pub joint_set: JointSet,
    pub arch: ArchKind,
    pub enc2d: EncoderParams<R>,
    pub enc3d: EncoderParams<R>,
    pub decoder: DecoderParams<R>,
    pub generator: GeneratorParams<R>,
    pub discriminator: DiscriminatorParams<R>,
}

impl<R: Real> Model<R> {
    /// Build and initialize all five networks. Deterministic for a given
    /// rng state.
    pub fn new(
        joints: usize,
        width: usize,
        dropout: R,
        joint_set: JointSet,
        arch: ArchKind,
        rng: &mut Rng,
    ) -> Result<Self> {
        if joints < 2 {
            return Err(Error::Config(format!("need at least 2 joints, got {joints}")));
        }
        if width < 8 {
            return Err(Error::Config(format!("width must be at least 8, got {width}")));
        }
        if dropout < R::zero() || dropout >= R::one() {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {dropout}"
            )));
        }
        let (in2d, in3d) = (2 * joints, 3 * joints);
        let gen_in = match arch {
            ArchKind::Full => in2d + width,
            ArchKind::Baseline => in2d,
        };
        let encoder = |inputs: usize, rng: &mut Rng| EncoderParams {
            input: LinearParams::he(inputs, width, rng),
            blocks: (0..2).map(|_| ResBlockParams::new(width, rng)).collect(),
        };
        Ok(Model {
            joints,
            width,
            dropout,
            joint_set,
            arch,
            enc2d: encoder(in2d, rng),
            enc3d: encoder(in3d, rng),
            decoder: DecoderParams {
                block: ResBlockParams::new(width, rng),
                output: LinearParams::he(width, in3d, rng),
            },
            generator: GeneratorParams {
                input: LinearParams::he(gen_in, width, rng),
                block: ResBlockParams::new(width, rng),
                output: LinearParams::he(width, in3d, rng),
            },
            discriminator: DiscriminatorParams {
                fc1: LinearParams::he(width, DISC_WIDTHS.0, rng),
                fc2: LinearParams::he(DISC_WIDTHS.0, DISC_WIDTHS.1, rng),
                fc3: LinearParams::he(DISC_WIDTHS.1, 1, rng),
            },
        })
    }

    /// Trainable tensors of a group, in the canonical visit order.
    pub fn params(&self, group: ParamGroup) -> Vec<(String, &Tensor<R>)> {
        let mut all: Vec<(String, &Tensor<R>)> = Vec::new();
        visit_encoder(&self.enc2d, "enc2d", &mut |n, t| all.push((n, t)));
        visit_encoder(&self.enc3d, "enc3d", &mut |n, t| all.push((n, t)));
        visit_decoder(&self.decoder, &mut |n, t| all.push((n, t)));
        visit_generator(&self.generator, &mut |n, t| all.push((n, t)));
        visit_discriminator(&self.discriminator, &mut |n, t| all.push((n, t)));
        all.retain(|(n, _)| group.admits(n));
        all
    }

    /// Mutable view of a group's tensors, in the same order as `params`.
    pub fn params_mut(&mut self, group: ParamGroup) -> Vec<(String, &mut Tensor<R>)> {
        let mut all: Vec<(String, &mut Tensor<R>)> = Vec::new();
        visit_encoder_mut(&mut self.enc2d, "enc2d", &mut |n, t| all.push((n, t)));
        visit_encoder_mut(&mut self.enc3d, "enc3d", &mut |n, t| all.push((n, t)));
        visit_decoder_mut(&mut self.decoder, &mut |n, t| all.push((n, t)));
        visit_generator_mut(&mut self.generator, &mut |n, t| all.push((n, t)));
        visit_discriminator_mut(&mut self.discriminator, &mut |n, t| all.push((n, t)));
        all.retain(|(n, _)| group.admits(n));
        all
    }

    pub fn param_count(&self, group: ParamGroup) -> usize {
        self.params(group).iter().map(|(_, t)| t.numel()).sum()
    }

    /// Batch-norm running statistics in visit order (for checkpointing).
    pub fn bn_states(&self) -> Vec<(String, &BatchNormState<R>)> {
        let mut out = Vec::new();
        for (prefix, blocks) in [
            ("enc2d", &self.enc2d.blocks),
            ("enc3d", &self.enc3d.blocks),
        ] {
            for (i, b) in blocks.iter().enumerate() {
                out.push((format!("{prefix}.block{i}.bn1"), &b.bn1.state));
                out.push((format!("{prefix}.block{i}.bn2"), &b.bn2.state));
            }
        }
        out.push(("decoder.block.bn1".to_string(), &self.decoder.block.bn1.state));
        out.push(("decoder.block.bn2".to_string(), &self.decoder.block.bn2.state));
        out.push((
            "generator.block.bn1".to_string(),
            &self.generator.block.bn1.state,
        ));
        out.push((
            "generator.block.bn2".to_string(),
            &self.generator.block.bn2.state,
        ));
        out
    }

    pub fn bn_states_mut(&mut self) -> Vec<(String, &mut BatchNormState<R>)> {
        let mut out: Vec<(String, &mut BatchNormState<R>)> = Vec::new();
        for (prefix, blocks) in [
            ("enc2d", &mut self.enc2d.blocks),
            ("enc3d", &mut self.enc3d.blocks),
        ] {
            for (i, b) in blocks.iter_mut().enumerate() {
                out.push((format!("{prefix}.block{i}.bn1"), &mut b.bn1.state));
                out.push((format!("{prefix}.block{i}.bn2"), &mut b.bn2.state));
            }
        }
        out.push((
            "decoder.block.bn1".to_string(),
            &mut self.decoder.block.bn1.state,
        ));
        out.push((
            "decoder.block.bn2".to_string(),
            &mut self.decoder.block.bn2.state,
        ));
        out.push((
            "generator.block.bn1".to_string(),
            &mut self.generator.block.bn1.state,
        ));
        out.push((
            "generator.block.bn2".to_string(),
            &mut self.generator.block.bn2.state,
        ));
        out
    }

    /// Leaf every trainable tensor onto the tape, in visit order.
    pub fn bind(&self, tape: &mut Tape<R>) -> BoundModel {
        BoundModel {
            enc2d: bind_encoder(tape, &self.enc2d),
            enc3d: bind_encoder(tape, &self.enc3d),
            decoder: BoundDecoder {
                block: bind_block(tape, &self.decoder.block),
                output: bind_linear(tape, &self.decoder.output),
            },
            generator: BoundGenerator {
                input: bind_linear(tape, &self.generator.input),
                block: bind_block(tape, &self.generator.block),
                output: bind_linear(tape, &self.generator.output),
            },
            discriminator: BoundDiscriminator {
                fc1: bind_linear(tape, &self.discriminator.fc1),
                fc2: bind_linear(tape, &self.discriminator.fc2),
                fc3: bind_linear(tape, &self.discriminator.fc3),
            },
        }
    }

    /// Leaf a second, frozen copy of the 3D encoder's tensors. Running a
    /// forward against this binding keeps gradients out of the real
    /// parameters (used by the `detach_reencoder` option).
    pub fn bind_enc3d_frozen(&self, tape: &mut Tape<R>) -> BoundEncoder {
        bind_encoder(tape, &self.enc3d)
    }

    /// Leaf only the discriminator's tensors (for its own update step,
    /// which runs on a separate tape over detached features).
    pub fn bind_discriminator(&self, tape: &mut Tape<R>) -> BoundDiscriminator {
        BoundDiscriminator {
            fc1: bind_linear(tape, &self.discriminator.fc1),
            fc2: bind_linear(tape, &self.discriminator.fc2),
            fc3: bind_linear(tape, &self.discriminator.fc3),
        }
    }

    /// f₂d = E2d(pose2d), B×w.
    pub fn encode2d(
        &mut self,
        tape: &mut Tape<R>,
        bound: &BoundModel,
        pose2d: NodeId,
        phase: Phase,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let dropout = self.dropout;
        encoder_forward(
            tape,
            &bound.enc2d,
            &mut self.enc2d,
            pose2d,
            dropout,
            phase,
            rng,
        )
    }

    /// h₃d = E3d(pose3d), B×w.
    pub fn encode3d(
        &mut self,
        tape: &mut Tape<R>,
        bound: &BoundModel,
        pose3d: NodeId,
        phase: Phase,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let dropout = self.dropout;
        encoder_forward(
            tape,
            &bound.enc3d,
            &mut self.enc3d,
            pose3d,
            dropout,
            phase,
            rng,
        )
    }

    /// As `encode3d`, but against a frozen binding from
    /// [`bind_enc3d_frozen`](Self::bind_enc3d_frozen). Batch-norm running
    /// statistics still update in train phase — only parameter gradients
    /// are cut.
    pub fn encode3d_against(
        &mut self,
        tape: &mut Tape<R>,
        frozen: &BoundEncoder,
        pose3d: NodeId,
        phase: Phase,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let dropout = self.dropout;
        encoder_forward(tape, frozen, &mut self.enc3d, pose3d, dropout, phase, rng)
    }

    /// Decode a latent feature back to a normalized 3D pose, B×3J.
    pub fn decode(
        &mut self,
        tape: &mut Tape<R>,
        bound: &BoundModel,
        latent: NodeId,
        phase: Phase,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let dropout = self.dropout;
        let h = block_forward(
            tape,
            &bound.decoder.block,
            &mut self.decoder.block,
            latent,
            dropout,
            phase,
            rng,
        )?;
        tape.linear(h, bound.decoder.output.w, bound.decoder.output.b)
    }

    /// Final 3D prediction. The full architecture consumes
    /// concat(pose2d, f2d); the baseline consumes pose2d alone and must be
    /// called with `f2d = None`.
    pub fn generate(
        &mut self,
        tape: &mut Tape<R>,
        bound: &BoundModel,
        pose2d: NodeId,
        f2d: Option<NodeId>,
        phase: Phase,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let x = match (self.arch, f2d) {
            (ArchKind::Full, Some(f)) => tape.concat(pose2d, f)?,
            (ArchKind::Baseline, None) => pose2d,
            (ArchKind::Full, None) => {
                return Err(Error::Config(
                    "full architecture generator needs the latent feature".into(),
                ))
            }
            (ArchKind::Baseline, Some(_)) => {
                return Err(Error::Config(
                    "baseline generator takes no latent feature".into(),
                ))
            }
        };
        let dropout = self.dropout;
        let h = tape.linear(x, bound.generator.input.w, bound.generator.input.b)?;
        let h = block_forward(
            tape,
            &bound.generator.block,
            &mut self.generator.block,
            h,
            dropout,
            phase,
            rng,
        )?;
        tape.linear(h, bound.generator.output.w, bound.generator.output.b)
    }

    /// Raw domain logits, B×1 (no BN, no dropout; ReLU between layers).
    pub fn discriminate(
        &self,
        tape: &mut Tape<R>,
        bound: &BoundDiscriminator,
        feature: NodeId,
    ) -> Result<NodeId> {
        let h = tape.linear(feature, bound.fc1.w, bound.fc1.b)?;
        let h = tape.relu(h);
        let h = tape.linear(h, bound.fc2.w, bound.fc2.b)?;
        let h = tape.relu(h);
        tape.linear(h, bound.fc3.w, bound.fc3.b)
    }

    /// Evaluation-mode lift of a normalized 2D batch to a normalized 3D
    /// batch: encode2d → generate (baseline: generate alone). Does not
    /// change any model state.
    pub fn lift(&mut self, pose2d_norm: &Tensor<R>) -> Result<Tensor<R>> {
        let mut tape = Tape::new();
        let mut rng = crate::rng::stream(0, crate::rng::Stream::Harness); // unused in eval
        let bound = self.bind(&mut tape);
        let x = tape.leaf(pose2d_norm.clone());
        let pred = match self.arch {
            ArchKind::Full => {
                let f2d = self.encode2d(&mut tape, &bound, x, Phase::Eval, &mut rng)?;
                self.generate(&mut tape, &bound, x, Some(f2d), Phase::Eval, &mut rng)?
            }
            ArchKind::Baseline => {
                self.generate(&mut tape, &bound, x, None, Phase::Eval, &mut rng)?
            }
        };
        Ok(tape.value(pred).clone())
    }
}

fn bind_linear<R: Real>(tape: &mut Tape<R>, p: &LinearParams<R>) -> BoundLinear {
    BoundLinear {
        w: tape.leaf(p.w.clone()),
        b: tape.leaf(p.b.clone()),
    }
}

fn bind_block<R: Real>(tape: &mut Tape<R>, p: &ResBlockParams<R>) -> BoundBlock {
    BoundBlock {
        fc1: bind_linear(tape, &p.fc1),
        bn1_gamma: tape.leaf(p.bn1.gamma.clone()),
        bn1_beta: tape.leaf(p.bn1.beta.clone()),
        fc2: bind_linear(tape, &p.fc2),
        bn2_gamma: tape.leaf(p.bn2.gamma.clone()),
        bn2_beta: tape.leaf(p.bn2.beta.clone()),
    }
}

fn bind_encoder<R: Real>(tape: &mut Tape<R>, p: &EncoderParams<R>) -> BoundEncoder {
    BoundEncoder {
        input: bind_linear(tape, &p.input),
        blocks: p.blocks.iter().map(|b| bind_block(tape, b)).collect(),
    }
}

/// linear → BN → ReLU → dropout, twice, then the skip connection.
fn block_forward<R: Real>(
    tape: &mut Tape<R>,
    ids: &BoundBlock,
    params: &mut ResBlockParams<R>,
    x: NodeId,
    dropout: R,
    phase: Phase,
    rng: &mut Rng,
) -> Result<NodeId> {
    let h = tape.linear(x, ids.fc1.w, ids.fc1.b)?;
    let h = tape.batchnorm(h, ids.bn1_gamma, ids.bn1_beta, &mut params.bn1.state, phase)?;
    let h = tape.relu(h);
    let h = tape.dropout(h, dropout, phase, rng)?;
    let h = tape.linear(h, ids.fc2.w, ids.fc2.b)?;
    let h = tape.batchnorm(h, ids.bn2_gamma, ids.bn2_beta, &mut params.bn2.state, phase)?;
    let h = tape.relu(h);
    let h = tape.dropout(h, dropout, phase, rng)?;
    tape.add(x, h)
}

fn encoder_forward<R: Real>(
    tape: &mut Tape<R>,
    ids: &BoundEncoder,
    params: &mut EncoderParams<R>,
    x: NodeId,
    dropout: R,
    phase: Phase,
    rng: &mut Rng,
) -> Result<NodeId> {
    let mut h = tape.linear(x, ids.input.w, ids.input.b)?;
    for (bound, block) in ids.blocks.iter().zip(params.blocks.iter_mut()) {
        h = block_forward(tape, bound, block, h, dropout, phase, rng)?;
    }
    Ok(h)
}

fn visit_linear<'a, R: Real>(
    p: &'a LinearParams<R>,
    prefix: &str,
    f: &mut impl FnMut(String, &'a Tensor<R>),
) {
    f(format!("{prefix}.w"), &p.w);
    f(format!("{prefix}.b"), &p.b);
}

fn visit_block<'a, R: Real>(
    p: &'a ResBlockParams<R>,
    prefix: &str,
    f: &mut impl FnMut(String, &'a Tensor<R>),
) {
    visit_linear(&p.fc1, &format!("{prefix}.fc1"), f);
    f(format!("{prefix}.bn1.gamma"), &p.bn1.gamma);
    f(format!("{prefix}.bn1.beta"), &p.bn1.beta);
    visit_linear(&p.fc2, &format!("{prefix}.fc2"), f);
    f(format!("{prefix}.bn2.gamma"), &p.bn2.gamma);
    f(format!("{prefix}.bn2.beta"), &p.bn2.beta);
}

fn visit_encoder<'a, R: Real>(
    p: &'a EncoderParams<R>,
    prefix: &str,
    f: &mut impl FnMut(String, &'a Tensor<R>),
) {
    visit_linear(&p.input, &format!("{prefix}.input"), f);
    for (i, b) in p.blocks.iter().enumerate() {
        visit_block(b, &format!("{prefix}.block{i}"), f);
    }
}

fn visit_decoder<'a, R: Real>(p: &'a DecoderParams<R>, f: &mut impl FnMut(String, &'a Tensor<R>)) {
    visit_block(&p.block, "decoder.block", f);
    visit_linear(&p.output, "decoder.output", f);
}

fn visit_generator<'a, R: Real>(
    p: &'a GeneratorParams<R>,
    f: &mut impl FnMut(String, &'a Tensor<R>),
) {
    visit_linear(&p.input, "generator.input", f);
    visit_block(&p.block, "generator.block", f);
    visit_linear(&p.output, "generator.output", f);
}

fn visit_discriminator<'a, R: Real>(
    p: &'a DiscriminatorParams<R>,
    f: &mut impl FnMut(String, &'a Tensor<R>),
) {
    visit_linear(&p.fc1, "disc.fc1", f);
    visit_linear(&p.fc2, "disc.fc2", f);
    visit_linear(&p.fc3, "disc.fc3", f);
}

// Mutable mirrors of the visitors above; kept in lockstep (a test asserts
// the two orders agree).

fn visit_linear_mut<'a, R: Real>(
    p: &'a mut LinearParams<R>,
    prefix: &str,
    f: &mut impl FnMut(String, &'a mut Tensor<R>),
) {
    f(format!("{prefix}.w"), &mut p.w);
    f(format!("{prefix}.b"), &mut p.b);
}

fn visit_block_mut<'a, R: Real>(
    p: &'a mut ResBlockParams<R>,
    prefix: &str,
    f: &mut impl FnMut(String, &'a mut Tensor<R>),
) {
    visit_linear_mut(&mut p.fc1, &format!("{prefix}.fc1"), f);
    f(format!("{prefix}.bn1.gamma"), &mut p.bn1.gamma);
    f(format!("{prefix}.bn1.beta"), &mut p.bn1.beta);
    visit_linear_mut(&mut p.fc2, &format!("{prefix}.fc2"), f);
    f(format!("{prefix}.bn2.gamma"), &mut p.bn2.gamma);
    f(format!("{prefix}.bn2.beta"), &mut p.bn2.beta);
}

fn visit_encoder_mut<'a, R: Real>(
    p: &'a mut EncoderParams<R>,
    prefix: &str,
    f: &mut impl FnMut(String, &'a mut Tensor<R>),
) {
    visit_linear_mut(&mut p.input, &format!("{prefix}.input"), f);
    for (i, b) in p.blocks.iter_mut().enumerate() {
        visit_block_mut(b, &format!("{prefix}.block{i}"), f);
    }
}

fn visit_decoder_mut<'a, R: Real>(
    p: &'a mut DecoderParams<R>,
    f: &mut impl FnMut(String, &'a mut Tensor<R>),
) {
    visit_block_mut(&mut p.block, "decoder.block", f);
    visit_linear_mut(&mut p.output, "decoder.output", f);
}

fn visit_generator_mut<'a, R: Real>(
    p: &'a mut GeneratorParams<R>,
    f: &mut impl FnMut(String, &'a mut Tensor<R>),
) {
    visit_linear_mut(&mut p.input, "generator.input", f);
    visit_block_mut(&mut p.block, "generator.block", f);
    visit_linear_mut(&mut p.output, "generator.output", f);
}

fn visit_discriminator_mut<'a, R: Real>(
    p: &'a mut DiscriminatorParams<R>,
    f: &mut impl FnMut(String, &'a mut Tensor<R>),
) {
    visit_linear_mut(&mut p.fc1, "disc.fc1", f);
    visit_linear_mut(&mut p.fc2, "disc.fc2", f);
    visit_linear_mut(&mut p.fc3, "disc.fc3", f);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::{stream, Stream};

    fn small_model() -> Model<f64> {
        let mut rng = stream(42, Stream::Weights);
        Model::new(4, 8, 0.0, JointSet::Custom, ArchKind::Full, &mut rng).unwrap()
    }

    #[test]
    fn dimension_arithmetic_for_the_reference_config() {
        let mut rng = stream(1, Stream::Weights);
        let m: Model<f64> =
            Model::new(16, 1024, 0.5, JointSet::H36m16, ArchKind::Full, &mut rng).unwrap();
        assert_eq!(m.enc2d.input.w.shape(), &[32, 1024]);
        assert_eq!(m.enc3d.input.w.shape(), &[48, 1024]);
        assert_eq!(m.generator.input.w.shape(), &[32 + 1024, 1024]);
        assert_eq!(m.generator.output.w.shape(), &[1024, 48]);
        assert_eq!(m.decoder.output.w.shape(), &[1024, 48]);
        assert_eq!(m.discriminator.fc1.w.shape(), &[1024, 512]);
        assert_eq!(m.discriminator.fc2.w.shape(), &[512, 1024]);
        assert_eq!(m.discriminator.fc3.w.shape(), &[1024, 1]);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let mut rng = stream(1, Stream::Weights);
        let (j, w) = (16usize, 1024usize);
        let m: Model<f64> =
            Model::new(j, w, 0.5, JointSet::H36m16, ArchKind::Full, &mut rng).unwrap();
        let lin = |i: usize, o: usize| i * o + o;
        let block = 2 * lin(w, w) + 4 * w;
        let encoder = |inp: usize| lin(inp, w) + 2 * block;
        let decoder = block + lin(w, 3 * j);
        let generator = lin(2 * j + w, w) + block + lin(w, 3 * j);
        let disc = lin(w, 512) + lin(512, 1024) + lin(1024, 1);
        let expect = encoder(2 * j) + encoder(3 * j) + decoder + generator + disc;
        assert_eq!(m.param_count(ParamGroup::All), expect);
        assert_eq!(m.param_count(ParamGroup::Discriminator), disc);
        assert_eq!(m.param_count(ParamGroup::Generator), generator);
        assert_eq!(
            m.param_count(ParamGroup::Main),
            expect - disc,
        );
    }

    #[test]
    fn baseline_has_strictly_fewer_parameters() {
        let mut rng = stream(1, Stream::Weights);
        let full: Model<f64> =
            Model::new(16, 64, 0.5, JointSet::H36m16, ArchKind::Full, &mut rng).unwrap();
        let mut rng = stream(1, Stream::Weights);
        let base: Model<f64> =
            Model::new(16, 64, 0.5, JointSet::H36m16, ArchKind::Baseline, &mut rng).unwrap();
        assert!(base.param_count(ParamGroup::All) < full.param_count(ParamGroup::All));
    }

    #[test]
    fn same_seed_gives_bit_identical_models() {
        let mut a = stream(7, Stream::Weights);
        let mut b = stream(7, Stream::Weights);
        let ma: Model<f64> =
            Model::new(16, 32, 0.5, JointSet::H36m16, ArchKind::Full, &mut a).unwrap();
        let mb: Model<f64> =
            Model::new(16, 32, 0.5, JointSet::H36m16, ArchKind::Full, &mut b).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn bind_order_matches_params_order() {
        let m = small_model();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let params = m.params(ParamGroup::All);
        assert_eq!(tape.len(), params.len());
        for (i, (name, tensor)) in params.iter().enumerate() {
            let id_value = tape.value(crate::graph::NodeId::from_index(i));
            assert_eq!(
                id_value, *tensor,
                "leaf {i} does not match parameter {name}"
            );
        }
        // anchor a couple of structural positions
        assert_eq!(bound.enc2d.input.w.index(), 0);
        assert_eq!(bound.discriminator.fc3.b.index(), params.len() - 1);
    }

    #[test]
    fn params_and_params_mut_agree_on_names() {
        let mut m = small_model();
        let names: Vec<String> = m
            .params(ParamGroup::All)
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        let names_mut: Vec<String> = m
            .params_mut(ParamGroup::All)
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        assert_eq!(names, names_mut);
        assert!(names.contains(&"enc2d.block1.bn2.beta".to_string()));
        assert!(names.contains(&"generator.input.w".to_string()));
    }

    #[test]
    fn zeroed_residual_branch_is_identity_in_eval() {
        let mut m = small_model();
        let block = &mut m.enc2d.blocks[0];
        block.fc1.w.data_mut().fill(0.0);
        block.fc1.b.data_mut().fill(0.0);
        block.fc2.w.data_mut().fill(0.0);
        block.fc2.b.data_mut().fill(0.0);
        let mut tape = Tape::new();
        let bound_block = bind_block(&mut tape, &m.enc2d.blocks[0]);
        let x = tape.leaf(Tensor::new(
            vec![2, 8],
            (0..16).map(|i| i as f64 * 0.25 - 2.0).collect(),
        ));
        let mut rng = stream(0, Stream::Harness);
        let y = block_forward(
            &mut tape,
            &bound_block,
            &mut m.enc2d.blocks[0],
            x,
            0.5,
            Phase::Eval,
            &mut rng,
        )
        .unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn eval_mode_is_batch_independent_and_deterministic() {
        let mut m = small_model();
        let mut rng = stream(3, Stream::Harness);
        let batch = Tensor::randn(vec![4, 8], 1.0, &mut rng);
        let full = m.lift(&batch).unwrap();
        let again = m.lift(&batch).unwrap();
        assert_eq!(full, again);
        for row in 0..4 {
            let single = Tensor::new(vec![1, 8], batch.row(row).to_vec());
            let one = m.lift(&single).unwrap();
            for (a, b) in one.data().iter().zip(full.row(row)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_final_disc_layer_gives_zero_logits() {
        let mut m = small_model();
        m.discriminator.fc3.w.data_mut().fill(0.0);
        m.discriminator.fc3.b.data_mut().fill(0.0);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let mut rng = stream(5, Stream::Harness);
        let x = tape.leaf(Tensor::randn(vec![3, 8], 1.0, &mut rng));
        let logits = m.discriminate(&mut tape, &bound.discriminator, x).unwrap();
        assert_eq!(tape.value(logits).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_of_all_networks_is_finite() {
        let mut m = small_model();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let mut rng = stream(9, Stream::Harness);
        let p2 = tape.leaf(Tensor::randn(vec![4, 8], 1.0, &mut rng));
        let p3 = tape.leaf(Tensor::randn(vec![4, 12], 1.0, &mut rng));
        let mut drop_rng = stream(9, Stream::DropoutLabeled);
        let f2d = m
            .encode2d(&mut tape, &bound, p2, Phase::Train, &mut drop_rng)
            .unwrap();
        let h3d = m
            .encode3d(&mut tape, &bound, p3, Phase::Train, &mut drop_rng)
            .unwrap();
        let dec = m
            .decode(&mut tape, &bound, h3d, Phase::Train, &mut drop_rng)
            .unwrap();
        let gen = m
            .generate(&mut tape, &bound, p2, Some(f2d), Phase::Train, &mut drop_rng)
            .unwrap();
        let logits = m.discriminate(&mut tape, &bound.discriminator, f2d).unwrap();
        for id in [f2d, h3d, dec, gen, logits] {
            assert!(tape.value(id).is_finite());
        }
        assert_eq!(tape.value(gen).shape(), &[4, 12]);
        assert_eq!(tape.value(logits).shape(), &[4, 1]);
    }

    #[test]
    fn gradcheck_through_encoder_and_generator() {
        // Gradient w.r.t. the 2D input through encode2d → generate → l2,
        // eval phase (deterministic), against central differences.
        let mut m = small_model();
        let x0 = {
            let mut rng = stream(11, Stream::Harness);
            Tensor::randn(vec![2, 8], 0.7, &mut rng)
        };
        let run = |m: &mut Model<f64>, x: &Tensor<f64>| -> (f64, Tensor<f64>) {
            let mut tape = Tape::new();
            let mut rng = stream(0, Stream::Harness);
            let bound = m.bind(&mut tape);
            let xid = tape.leaf(x.clone());
            let f2d = m
                .encode2d(&mut tape, &bound, xid, Phase::Eval, &mut rng)
                .unwrap();
            let pred = m
                .generate(&mut tape, &bound, xid, Some(f2d), Phase::Eval, &mut rng)
                .unwrap();
            let zero = tape.leaf(Tensor::zeros(vec![2, 12]));
            let loss = tape.l2_loss(pred, zero).unwrap();
            let g = tape.backward(loss).wrt(xid, &tape);
            (tape.value(loss).item(), g)
        };
        let (_, analytic) = run(&mut m, &x0);
        let err = grad_check(|x| run(&mut m, x).0, &x0, &analytic, 1e-5);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn gradcheck_through_discriminator() {
        let mut m = small_model();
        let x0 = {
            let mut rng = stream(13, Stream::Harness);
            Tensor::randn(vec![2, 8], 0.5, &mut rng)
        };
        let run = |m: &mut Model<f64>, x: &Tensor<f64>| -> (f64, Tensor<f64>) {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape);
            let xid = tape.leaf(x.clone());
            let logits = m.discriminate(&mut tape, &bound.discriminator, xid).unwrap();
            let loss = tape.bce_with_logit(logits, &[1.0, 0.0]).unwrap();
            let g = tape.backward(loss).wrt(xid, &tape);
            (tape.value(loss).item(), g)
        };
        let (_, analytic) = run(&mut m, &x0);
        let err = grad_check(|x| run(&mut m, x).0, &x0, &analytic, 1e-5);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn baseline_generate_rejects_latent_input() {
        let mut rng = stream(2, Stream::Weights);
        let mut m: Model<f64> =
            Model::new(4, 8, 0.0, JointSet::Custom, ArchKind::Baseline, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let mut hrng = stream(0, Stream::Harness);
        let p2 = tape.leaf(Tensor::randn(vec![2, 8], 1.0, &mut hrng));
        let ok = m.generate(&mut tape, &bound, p2, None, Phase::Eval, &mut hrng);
        assert!(ok.is_ok());
        let bad = m.generate(&mut tape, &bound, p2, Some(p2), Phase::Eval, &mut hrng);
        assert!(bad.is_err());
    }
}
