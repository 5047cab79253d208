//! The budgeted extraction loop: adversarial pretraining on proxy data,
//! clone initialization from mixed batches, generator refinement with the
//! class-diversity objective (clone as the differentiable stand-in for the
//! victim), clone retraining, and the alternating phase that spends the
//! query budget.

mod checkpoint;
mod config;
mod history;

pub use checkpoint::{Checkpoint, CheckpointHeader, PhaseMarker};
pub use config::{AttackConfig, AttackMode};
pub use history::{HistoryRow, TrainingHistory};

use std::path::Path;

use ndarray::{Array1, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{ImageSet, LabeledImages};
use crate::error::{Error, Result};
use crate::losses::{
    adv_fake_grad, adv_real_grad, class_diversity_from_scores, clone_ce_grad, discriminator_loss,
    generator_loss, kl_grad_scores, l1_logit_grad,
};
use crate::nn::{
    build_network, cosine_lr, sample_latent, Adam, Feature, Net, NetworkSpec, Role, SgdMomentum,
};
use crate::oracle::{hard_label_query, soft_label_query, total_query_cost, QueryLedger, VictimModel};
use crate::rng::{restore_state, save_state, Rng};

pub const PHASE_PRETRAIN: &str = "pretrain";
pub const PHASE_INIT_CLONE: &str = "init_clone";
pub const PHASE_REFINE: &str = "refine";
pub const PHASE_RETRAIN: &str = "retrain_clone";
pub const PHASE_ALTERNATING: &str = "alternating";

/// Everything the attack is allowed to touch: the metered victim, the proxy
/// pool, and (experimenter-side only) a labeled test set for reporting.
pub struct AttackEnv<'e> {
    pub victim: &'e VictimModel,
    pub proxy: &'e ImageSet,
    pub test_set: Option<&'e LabeledImages>,
}

pub struct AttackOutcome {
    pub clone: Net,
    pub generator: Net,
    pub discriminator: Net,
    pub history: TrainingHistory,
    pub ledger: QueryLedger,
    /// Best checkpoint accuracy over the run (the saturating value).
    pub final_accuracy: Option<f64>,
}

/// One in-flight run. Phase methods mirror the pipeline stages and can be
/// driven individually; [`run_attack`] is the end-to-end orchestrator.
pub struct AttackRun<'e> {
    pub cfg: AttackConfig,
    env: AttackEnv<'e>,
    pub rng: Rng,
    pub gen: Net,
    pub dis: Net,
    pub clone_net: Net,
    opt_g: Adam,
    opt_d: Adam,
    opt_c: SgdMomentum,
    pub ledger: QueryLedger,
    pub history: TrainingHistory,
    pub phase: PhaseMarker,
    global_step: u64,
    clone_alt_steps: u64,
    gan_iters: u64,
    best_acc: Option<f64>,
    best_at_queries: u64,
}

impl<'e> AttackRun<'e> {
    pub fn new(cfg: AttackConfig, env: AttackEnv<'e>) -> Result<Self> {
        cfg.validate()?;
        let (c, h, w) = env.victim.input_shape;
        if (h, w) != (32, 32) {
            return Err(Error::validation(
                "built-in architectures target 32x32 inputs",
            ));
        }
        if env.proxy.is_empty() {
            return Err(Error::validation("proxy corpus is empty"));
        }
        if env.proxy.channels() != c {
            return Err(Error::shape(format!(
                "proxy images have {} channels, victim expects {c}",
                env.proxy.channels()
            )));
        }
        let k = env.victim.num_classes;
        let mut rng = crate::rng::seed_rng(cfg.seed);
        let gen_spec = NetworkSpec::generator_32(cfg.latent_dim, cfg.generator_base, c);
        let dis_spec = NetworkSpec::discriminator_32(c, cfg.discriminator_base);
        let clone_spec = NetworkSpec::classifier_32(Role::Clone, c, k, cfg.clone_arch);
        let gen = build_network(&gen_spec, &mut rng)?;
        let dis = build_network(&dis_spec, &mut rng)?;
        let clone_net = build_network(&clone_spec, &mut rng)?;
        let ledger = QueryLedger::new(Some(total_query_cost(cfg.n_c, cfg.n_q)));
        let opt_g = Adam::new(cfg.gan_lr, cfg.gan_beta1, cfg.gan_beta2);
        let opt_d = Adam::new(cfg.gan_lr, cfg.gan_beta1, cfg.gan_beta2);
        let opt_c = SgdMomentum::new(cfg.clone_lr_peak, cfg.clone_momentum, cfg.clone_weight_decay);
        Ok(AttackRun {
            cfg,
            env,
            rng,
            gen,
            dis,
            clone_net,
            opt_g,
            opt_d,
            opt_c,
            ledger,
            history: TrainingHistory::default(),
            phase: PhaseMarker::Start,
            global_step: 0,
            clone_alt_steps: 0,
            gan_iters: 0,
            best_acc: None,
            best_at_queries: 0,
        })
    }

    /// Rebuilds a run from a checkpoint; `cfg` may differ from the
    /// checkpointed config in post-checkpoint fields (paired ablations
    /// branch from a shared pretraining checkpoint).
    pub fn resume(cfg: AttackConfig, env: AttackEnv<'e>, ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let header = ck.header;
        if header.config_text != cfg.to_text() {
            log::info!("resume: config differs from checkpointed run");
        }
        let mut throwaway = crate::rng::seed_rng(0);
        let mut gen = build_network(&NetworkSpec::parse(&header.gen_spec)?, &mut throwaway)?;
        let mut dis = build_network(&NetworkSpec::parse(&header.dis_spec)?, &mut throwaway)?;
        let mut clone_net = build_network(&NetworkSpec::parse(&header.clone_spec)?, &mut throwaway)?;
        gen.import_tensors("g", &ck.tensors)?;
        dis.import_tensors("d", &ck.tensors)?;
        clone_net.import_tensors("c", &ck.tensors)?;
        let mut opt_g = Adam::new(cfg.gan_lr, cfg.gan_beta1, cfg.gan_beta2);
        opt_g.import_state(
            header.adam_g_t,
            crate::nn::blobs_from_entries("optg.m", &ck.tensors),
            crate::nn::blobs_from_entries("optg.v", &ck.tensors),
        );
        let mut opt_d = Adam::new(cfg.gan_lr, cfg.gan_beta1, cfg.gan_beta2);
        opt_d.import_state(
            header.adam_d_t,
            crate::nn::blobs_from_entries("optd.m", &ck.tensors),
            crate::nn::blobs_from_entries("optd.v", &ck.tensors),
        );
        let mut opt_c = SgdMomentum::new(cfg.clone_lr_peak, cfg.clone_momentum, cfg.clone_weight_decay);
        opt_c.import_state(crate::nn::blobs_from_entries("optc.vel", &ck.tensors));
        Ok(AttackRun {
            cfg,
            env,
            rng: restore_state(&header.rng),
            gen,
            dis,
            clone_net,
            opt_g,
            opt_d,
            opt_c,
            ledger: header.ledger,
            history: header.history,
            phase: header.phase,
            global_step: header.global_step,
            clone_alt_steps: header.clone_alt_steps,
            gan_iters: header.gan_iters,
            best_acc: header.best_accuracy,
            best_at_queries: header.best_at_queries,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        tensors.extend(self.gen.export_tensors("g"));
        tensors.extend(self.dis.export_tensors("d"));
        tensors.extend(self.clone_net.export_tensors("c"));
        let (gt, gm, gv) = self.opt_g.export_state();
        tensors.extend(crate::nn::entries_from_blobs("optg.m", &gm));
        tensors.extend(crate::nn::entries_from_blobs("optg.v", &gv));
        let (dt, dm, dv) = self.opt_d.export_state();
        tensors.extend(crate::nn::entries_from_blobs("optd.m", &dm));
        tensors.extend(crate::nn::entries_from_blobs("optd.v", &dv));
        tensors.extend(crate::nn::entries_from_blobs(
            "optc.vel",
            &self.opt_c.export_state(),
        ));
        Checkpoint {
            header: CheckpointHeader {
                version: crate::FORMAT_VERSION,
                phase: self.phase,
                config_text: self.cfg.to_text(),
                rng: save_state(&self.rng),
                ledger: self.ledger.clone(),
                history: self.history.clone(),
                gen_spec: self.gen.spec.to_text(),
                dis_spec: self.dis.spec.to_text(),
                clone_spec: self.clone_net.spec.to_text(),
                adam_g_t: gt,
                adam_d_t: dt,
                clone_alt_steps: self.clone_alt_steps,
                gan_iters: self.gan_iters,
                global_step: self.global_step,
                best_accuracy: self.best_acc,
                best_at_queries: self.best_at_queries,
            },
            tensors,
        }
    }

    fn push_row(&mut self, phase: &str, row: RowData) -> Result<()> {
        self.history.push(HistoryRow {
            step: self.global_step,
            phase: phase.to_string(),
            queries_used: self.ledger.used(),
            loss_g: row.loss_g,
            loss_d: row.loss_d,
            loss_c: row.loss_c,
            clone_accuracy: row.clone_accuracy,
            hist_entropy: row.hist_entropy,
        })?;
        self.global_step += 1;
        Ok(())
    }

    /// Fresh generator batch in training mode. Running statistics move only
    /// when the forward feeds the generator's own update.
    fn sample_fake(&mut self, batch: usize, own_update: bool) -> Result<Array4<f32>> {
        let z = sample_latent(batch, self.cfg.latent_dim, &mut self.rng)?;
        self.gen
            .forward_train(Feature::Flat(z), own_update)?
            .into_map()
    }

    fn sample_proxy(&mut self, batch: usize) -> Array4<f32> {
        let n = self.env.proxy.len();
        let idx: Vec<usize> = (0..batch).map(|_| self.rng.gen_range(0..n)).collect();
        self.env.proxy.images.select(Axis(0), &idx)
    }

    fn squeeze(scores: Array2<f32>) -> Array1<f32> {
        let n = scores.nrows();
        scores.into_shape_with_order(n).expect("(n,1) squeeze")
    }

    fn unsqueeze(col: Array1<f32>) -> Array2<f32> {
        let n = col.len();
        col.into_shape_with_order((n, 1)).expect("(n,) unsqueeze")
    }

    /// Generator update: descend `adv_fake + lambda * class_div`, with the
    /// clone as the (frozen) diversity scorer. Returns (L_G, adv, div).
    fn generator_step(&mut self, lambda: f64, with_diversity: bool) -> Result<(f64, f64, Option<f64>)> {
        self.gen.zero_grads();
        let x = self.sample_fake(self.cfg.batch_size, true)?;

        self.dis.frozen = true;
        let p = Self::squeeze(
            self.dis
                .forward_train(Feature::Map(x.clone()), false)?
                .into_flat()?,
        );
        let (l_fake, dp) = adv_fake_grad(&p.view())?;
        let dx_adv = self.dis.backward(Feature::Flat(Self::unsqueeze(dp)))?;
        self.dis.frozen = false;

        let mut dx = dx_adv;
        let mut l_div = None;
        if with_diversity && lambda > 0.0 {
            self.clone_net.frozen = true;
            let scores = self
                .clone_net
                .forward_frozen(Feature::Map(x))?
                .into_flat()?;
            let (ld, dscores) = class_diversity_from_scores(&scores.view())?;
            let dx_div = self
                .clone_net
                .backward(Feature::Flat(dscores * lambda as f32))?;
            self.clone_net.frozen = false;
            dx.scaled_add(1.0, &dx_div)?;
            l_div = Some(ld as f64);
        }
        self.gen.backward(dx)?;
        self.opt_g.step(&mut self.gen);
        let report = generator_loss(l_fake as f64, l_div.unwrap_or(0.0), lambda)?;
        Ok((report.value, l_fake as f64, l_div))
    }

    /// Discriminator update: ascend `adv_real + adv_fake` on fresh batches.
    fn discriminator_step(&mut self) -> Result<f64> {
        self.dis.zero_grads();
        let real = self.sample_proxy(self.cfg.batch_size);
        let fake = self.sample_fake(self.cfg.batch_size, false)?;

        let p_real = Self::squeeze(
            self.dis
                .forward_train(Feature::Map(real), true)?
                .into_flat()?,
        );
        let (l_real, g_real) = adv_real_grad(&p_real.view())?;
        // descend the negation so the discriminator ascends L_D
        self.dis
            .backward(Feature::Flat(Self::unsqueeze(g_real.mapv(|v| -v))))?;

        let p_fake = Self::squeeze(
            self.dis
                .forward_train(Feature::Map(fake), true)?
                .into_flat()?,
        );
        let (l_fake, g_fake) = adv_fake_grad(&p_fake.view())?;
        self.dis
            .backward(Feature::Flat(Self::unsqueeze(g_fake.mapv(|v| -v))))?;

        self.opt_d.step(&mut self.dis);
        Ok(discriminator_loss(l_real as f64, l_fake as f64).value)
    }

    /// One generator(+discriminator) iteration, used by every phase. The
    /// discriminator moves on every `gan.d_every`-th iteration, a standard
    /// balance lever for the saturating adversarial objective.
    fn gan_iteration(&mut self, lambda: f64, with_diversity: bool) -> Result<(f64, Option<f64>)> {
        let (l_g, _, _) = self.generator_step(lambda, with_diversity)?;
        let d_due = self.gan_iters % self.cfg.gan_d_every == 0;
        self.gan_iters += 1;
        let l_d = if self.cfg.discriminator_enabled && d_due {
            Some(self.discriminator_step()?)
        } else {
            None
        };
        Ok((l_g, l_d))
    }

    /// Adversarial pretraining on proxy data only; zero victim queries.
    pub fn pretrain_gan(&mut self) -> Result<()> {
        if self.env.proxy.is_empty() {
            return Err(Error::validation("cannot pretrain on an empty corpus"));
        }
        let queries_before = self.ledger.used();
        let steps_per_epoch = self.env.proxy.len().div_ceil(self.cfg.batch_size);
        for _epoch in 0..self.cfg.pretrain_epochs {
            for _ in 0..steps_per_epoch {
                // pretraining is the plain adversarial game: no diversity
                let (l_g, l_d) = self.gan_iteration(0.0, false)?;
                self.push_row(
                    PHASE_PRETRAIN,
                    RowData {
                        loss_g: Some(l_g),
                        loss_d: l_d,
                        ..RowData::default()
                    },
                )?;
            }
        }
        debug_assert_eq!(self.ledger.used(), queries_before);
        self.phase = PhaseMarker::AfterPretrain;
        Ok(())
    }

    /// Labels `n_c` images (budget-charged) and trains the clone on the
    /// cached pairs. `mix_fraction` of each collected batch comes from the
    /// proxy pool, the rest from the generator.
    fn clone_training_phase(
        &mut self,
        phase: &'static str,
        n_c: u64,
        epochs: usize,
        mix_fraction: f64,
    ) -> Result<()> {
        if n_c == 0 {
            return Ok(());
        }
        if !self.ledger.admits(n_c) {
            return Err(Error::BudgetExhausted {
                requested: n_c,
                remaining: self.ledger.remaining().unwrap_or(0),
            });
        }
        let (c, h, w) = self.env.victim.input_shape;
        let mut images = Array4::<f32>::zeros((n_c as usize, c, h, w));
        let mut labels = Vec::with_capacity(n_c as usize);
        let mut filled = 0usize;
        while (filled as u64) < n_c {
            let b = self.cfg.batch_size.min(n_c as usize - filled);
            let n_proxy = ((mix_fraction * b as f64).round() as usize).min(b);
            let mut batch = Array4::<f32>::zeros((b, c, h, w));
            if n_proxy > 0 {
                let proxy = self.sample_proxy(n_proxy);
                batch.slice_mut(ndarray::s![..n_proxy, .., .., ..]).assign(&proxy);
            }
            if b - n_proxy > 0 {
                let fake = self.sample_fake(b - n_proxy, false)?;
                batch.slice_mut(ndarray::s![n_proxy.., .., .., ..]).assign(&fake);
            }
            let batch_labels = hard_label_query(self.env.victim, &batch, &mut self.ledger, phase)?;
            images
                .slice_mut(ndarray::s![filled..filled + b, .., .., ..])
                .assign(&batch);
            labels.extend(batch_labels);
            filled += b;
        }

        let steps_per_epoch = (n_c as usize).div_ceil(self.cfg.batch_size);
        let total_steps = (steps_per_epoch * epochs) as u64;
        let mut step = 0u64;
        for _epoch in 0..epochs {
            let mut order: Vec<usize> = (0..n_c as usize).collect();
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.batch_size) {
                let xb = images.select(Axis(0), chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                self.opt_c
                    .set_lr(cosine_lr(self.cfg.clone_lr_peak, step, total_steps));
                self.clone_net.zero_grads();
                let scores = self
                    .clone_net
                    .forward_train(Feature::Map(xb), true)?
                    .into_flat()?;
                let (l_c, grad) = clone_ce_grad(&scores.view(), &yb)?;
                self.clone_net.backward(Feature::Flat(grad))?;
                self.opt_c.step(&mut self.clone_net);
                step += 1;
                self.push_row(
                    phase,
                    RowData {
                        loss_c: Some(l_c as f64),
                        ..RowData::default()
                    },
                )?;
            }
        }
        Ok(())
    }

    /// First clone: mixed generator/proxy batches, exactly `n_c` charged.
    pub fn init_clone(&mut self) -> Result<()> {
        let mix = self.cfg.init_mix_fraction;
        self.clone_training_phase(PHASE_INIT_CLONE, self.cfg.n_c, self.cfg.init_epochs, mix)?;
        let (acc, ent) = self.evaluate_now()?;
        self.push_row(
            PHASE_INIT_CLONE,
            RowData {
                clone_accuracy: acc,
                hist_entropy: ent,
                ..RowData::default()
            },
        )?;
        self.phase = PhaseMarker::AfterInitClone;
        Ok(())
    }

    /// Generator refinement with the diversity objective; zero queries.
    pub fn refine_generator(&mut self) -> Result<()> {
        let queries_before = self.ledger.used();
        for _ in 0..self.cfg.n_g {
            let lambda = self.cfg.lambda_div;
            let (l_g, l_d) = self.gan_iteration(lambda, true)?;
            self.push_row(
                PHASE_REFINE,
                RowData {
                    loss_g: Some(l_g),
                    loss_d: l_d,
                    ..RowData::default()
                },
            )?;
        }
        debug_assert_eq!(self.ledger.used(), queries_before);
        self.phase = PhaseMarker::AfterRefine;
        Ok(())
    }

    /// Fresh clone trained from scratch on generator samples only; exactly
    /// `n_c` charged.
    pub fn retrain_clone(&mut self) -> Result<()> {
        // from scratch: new parameters, new optimizer state
        self.clone_net = build_network(&self.clone_net.spec.clone(), &mut self.rng)?;
        self.opt_c = SgdMomentum::new(
            self.cfg.clone_lr_peak,
            self.cfg.clone_momentum,
            self.cfg.clone_weight_decay,
        );
        self.clone_training_phase(PHASE_RETRAIN, self.cfg.n_c, self.cfg.retrain_epochs, 0.0)?;
        let (acc, ent) = self.evaluate_now()?;
        self.push_row(
            PHASE_RETRAIN,
            RowData {
                clone_accuracy: acc,
                hist_entropy: ent,
                ..RowData::default()
            },
        )?;
        self.phase = PhaseMarker::AfterRetrain;
        Ok(())
    }

    fn clone_step_alternating(&mut self, batch: usize) -> Result<f64> {
        let x = self.sample_fake(batch, false)?;
        let total_steps = self.cfg.n_q.div_ceil(self.cfg.batch_size as u64);
        self.opt_c.set_lr(cosine_lr(
            self.cfg.clone_lr_alternating,
            self.clone_alt_steps,
            total_steps,
        ));
        self.clone_net.zero_grads();
        let loss = match self.cfg.mode {
            AttackMode::Hard => {
                let labels =
                    hard_label_query(self.env.victim, &x, &mut self.ledger, PHASE_ALTERNATING)?;
                let scores = self
                    .clone_net
                    .forward_train(Feature::Map(x), true)?
                    .into_flat()?;
                let (l, grad) = clone_ce_grad(&scores.view(), &labels)?;
                self.clone_net.backward(Feature::Flat(grad))?;
                l as f64
            }
            AttackMode::SoftL1 => {
                let probs =
                    soft_label_query(self.env.victim, &x, &mut self.ledger, PHASE_ALTERNATING)?;
                let scores = self
                    .clone_net
                    .forward_train(Feature::Map(x), true)?
                    .into_flat()?;
                let (l, grad) = l1_logit_grad(&probs.view(), &scores.view())?;
                self.clone_net.backward(Feature::Flat(grad))?;
                l as f64
            }
            AttackMode::SoftKl => {
                let probs =
                    soft_label_query(self.env.victim, &x, &mut self.ledger, PHASE_ALTERNATING)?;
                let scores = self
                    .clone_net
                    .forward_train(Feature::Map(x), true)?
                    .into_flat()?;
                let (l, grad) = kl_grad_scores(&probs.view(), &scores.view())?;
                self.clone_net.backward(Feature::Flat(grad))?;
                l as f64
            }
        };
        self.opt_c.step(&mut self.clone_net);
        self.clone_alt_steps += 1;
        Ok(loss)
    }

    /// Clone accuracy on the experimenter's test set plus the normalized
    /// entropy of a clone-labeled histogram over fresh generator samples.
    pub fn evaluate_now(&mut self) -> Result<(Option<f64>, Option<f64>)> {
        let acc = match self.env.test_set {
            Some(test) => Some(crate::evalkit::clone_accuracy(&self.clone_net, test)?),
            None => None,
        };
        let hist = crate::evalkit::class_histogram(
            &self.gen,
            Some(&self.clone_net),
            None,
            self.env.victim.num_classes,
            self.cfg.hist_samples,
            &mut self.rng,
        )?;
        Ok((acc, Some(hist.normalized_entropy())))
    }

    fn note_eval(&mut self, acc: Option<f64>) {
        if let Some(a) = acc {
            let improved = self
                .best_acc
                .map(|b| a >= b + 1e-3) // 0.1 accuracy point
                .unwrap_or(true);
            if self.best_acc.map(|b| a > b).unwrap_or(true) {
                self.best_acc = Some(a);
            }
            if improved {
                self.best_at_queries = self.ledger.phase(PHASE_ALTERNATING);
            }
        }
    }

    /// Alternating generator/clone training until the `n_q` budget is
    /// exhausted (clean termination). A model with iteration gap `t`
    /// updates on every (t+1)-th iteration.
    pub fn alternating_loop(&mut self, out_dir: Option<&Path>) -> Result<()> {
        let n_q = self.cfg.n_q;
        let mut iter = match self.phase {
            PhaseMarker::Alternating { next_iter } => next_iter,
            _ => 0,
        };
        while self.ledger.phase(PHASE_ALTERNATING) < n_q {
            let mut row = RowData::default();
            if iter % (self.cfg.iteration_gap_g + 1) == 0 {
                let (l_g, l_d) = self.gan_iteration(self.cfg.lambda_div, true)?;
                row.loss_g = Some(l_g);
                row.loss_d = l_d;
            }
            if iter % (self.cfg.iteration_gap_c + 1) == 0 {
                let spent = self.ledger.phase(PHASE_ALTERNATING);
                let mut b = (self.cfg.batch_size as u64).min(n_q - spent);
                if let Some(remaining) = self.ledger.remaining() {
                    b = b.min(remaining);
                }
                if b == 0 {
                    break; // overall budget exhausted: clean termination
                }
                row.loss_c = Some(self.clone_step_alternating(b as usize)?);
            }
            let evaluated = iter % self.cfg.eval_every == 0 || self.ledger.phase(PHASE_ALTERNATING) >= n_q;
            if evaluated {
                let (acc, ent) = self.evaluate_now()?;
                row.clone_accuracy = acc;
                row.hist_entropy = ent;
                self.note_eval(acc);
            }
            self.push_row(PHASE_ALTERNATING, row)?;

            iter += 1;
            self.phase = PhaseMarker::Alternating { next_iter: iter };
            if self.cfg.checkpoint_every > 0 && iter % self.cfg.checkpoint_every == 0 {
                if let Some(dir) = out_dir {
                    self.checkpoint()
                        .save(&dir.join(format!("checkpoint_alt_{iter:08}.mxck")))?;
                }
            }
            if self.cfg.early_stop {
                let spent = self.ledger.phase(PHASE_ALTERNATING);
                if self.best_acc.is_some()
                    && spent.saturating_sub(self.best_at_queries) > n_q / 5
                {
                    log::info!("early stop: accuracy saturated at {spent} alternating queries");
                    break;
                }
            }
        }
        self.phase = PhaseMarker::Done;
        Ok(())
    }

    fn save_phase_checkpoint(&self, out_dir: Option<&Path>, name: &str) -> Result<()> {
        if let Some(dir) = out_dir {
            self.checkpoint()
                .save(&dir.join(format!("checkpoint_{name}.mxck")))?;
        }
        Ok(())
    }

    /// Executes every remaining phase, checkpointing at phase boundaries.
    pub fn run_to_completion(&mut self, out_dir: Option<&Path>) -> Result<()> {
        if self.phase == PhaseMarker::Start {
            self.pretrain_gan()?;
            self.save_phase_checkpoint(out_dir, "pretrain")?;
        }
        if self.phase == PhaseMarker::AfterPretrain {
            self.init_clone()?;
            self.save_phase_checkpoint(out_dir, "init_clone")?;
        }
        if self.phase == PhaseMarker::AfterInitClone {
            self.refine_generator()?;
            self.save_phase_checkpoint(out_dir, "refine")?;
        }
        if self.phase == PhaseMarker::AfterRefine {
            self.retrain_clone()?;
            self.save_phase_checkpoint(out_dir, "retrain")?;
        }
        if matches!(
            self.phase,
            PhaseMarker::AfterRetrain | PhaseMarker::Alternating { .. }
        ) {
            self.alternating_loop(out_dir)?;
        }
        // final evaluation row so the history always ends with a reading
        let (acc, ent) = self.evaluate_now()?;
        self.note_eval(acc);
        self.push_row(
            PHASE_ALTERNATING,
            RowData {
                clone_accuracy: acc,
                hist_entropy: ent,
                ..RowData::default()
            },
        )?;
        self.save_phase_checkpoint(out_dir, "final")?;
        Ok(())
    }

    pub fn into_outcome(self) -> AttackOutcome {
        let final_accuracy = self.history.best_accuracy().map(|(a, _)| a);
        AttackOutcome {
            clone: self.clone_net,
            generator: self.gen,
            discriminator: self.dis,
            history: self.history,
            ledger: self.ledger,
            final_accuracy,
        }
    }
}

#[derive(Default)]
struct RowData {
    loss_g: Option<f64>,
    loss_d: Option<f64>,
    loss_c: Option<f64>,
    clone_accuracy: Option<f64>,
    hist_entropy: Option<f64>,
}

/// End-to-end attack: pretrain, initialize, refine, retrain, alternate.
/// `resume` continues from a checkpoint with ledger integrity preserved.
pub fn run_attack(
    cfg: &AttackConfig,
    env: AttackEnv<'_>,
    resume: Option<Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<AttackOutcome> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut run = match resume {
        Some(ck) => AttackRun::resume(cfg.clone(), env, ck)?,
        None => AttackRun::new(cfg.clone(), env)?,
    };
    run.run_to_completion(out_dir)?;
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("history.csv"), run.history.to_csv())?;
    }
    Ok(run.into_outcome())
}
