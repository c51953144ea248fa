use std::ops::Range;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::envs::EnvSpec;
use crate::numkit::{
    kl_std_normal_rows, reparam_backward, reparam_sample, Activation, LayerSpec, Mlp, MlpTape, NumError,
    ParameterSet,
};

use super::table::{nn_decode, repair_collisions};
use super::{squared_row_error, ReprBatch, ReprConfig, ReprError};

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 15.0;
const TABLE: usize = 0;

/// Parameter groups of the model, used to target gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Table,
    Encoder,
    /// Latent and condition branches plus the shared transform of the decoder.
    SharedDecoder,
    Reconstruction,
    Prediction,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Table,
        ParamGroup::Encoder,
        ParamGroup::SharedDecoder,
        ParamGroup::Reconstruction,
        ParamGroup::Prediction,
    ];
}

/// Batch-mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReprLoss {
    /// `vae + β·dynamics`
    pub total: f64,
    /// `recon + kl_weight·kl`
    pub vae: f64,
    pub dynamics: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Embedding table plus conditional VAE with a cascaded dynamics head.
///
/// Both encoder and decoder combine an input branch and a condition branch
/// `[s, e]` by element-wise product. The decoder's shared transform feeds the
/// reconstruction head directly and the prediction head through one more
/// hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprModel {
    spec: EnvSpec,
    config: ReprConfig,
    params: ParameterSet,
    enc_param: Mlp,
    enc_cond: Mlp,
    enc_trunk: Mlp,
    enc_mean: Mlp,
    enc_log_std: Mlp,
    dec_latent: Mlp,
    dec_cond: Mlp,
    dec_trunk: Mlp,
    dec_recon: Mlp,
    dec_pred: Mlp,
}

struct EncoderPass {
    hx: Array2<f64>,
    hc: Array2<f64>,
    tapes: [MlpTape; 5],
    mu: Array2<f64>,
    log_std: Array2<f64>,
    raw_log_std: Array2<f64>,
}

struct DecoderPass {
    hz: Array2<f64>,
    hc: Array2<f64>,
    tapes: [MlpTape; 5],
    recon: Array2<f64>,
    pred: Array2<f64>,
}

struct LossPass {
    enc: EncoderPass,
    dec: DecoderPass,
    mask: Array2<f64>,
    x: Array2<f64>,
    residual: Array2<f64>,
    loss: ReprLoss,
}

/// Rows per block in inference passes, so hidden activations stay in cache.
const INFERENCE_CHUNK: usize = 256;

fn chunks(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).step_by(INFERENCE_CHUNK).map(move |start| (start, (start + INFERENCE_CHUNK).min(n)))
}

fn signature_of(tapes: &[MlpTape], mut h: u64) -> u64 {
    for t in tapes {
        h = (h ^ t.relu_signature()).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ReprModel {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, config: ReprConfig, rng: &mut R) -> Result<Self, ReprError> {
        if config.d1 == 0 || config.d2 == 0 || config.hidden == 0 {
            return Err(ReprError::Config(format!("latent and hidden sizes must be positive: {config:?}")));
        }
        if spec.num_actions == 0 || spec.state_dim == 0 {
            return Err(ReprError::Config("environment has no actions or no state".into()));
        }
        let (h, p, st) = (config.hidden, spec.padded_param_dim(), spec.state_dim);
        let cond = st + config.d1;
        let mut params = ParameterSet::new();
        let table = Array2::from_shape_fn((spec.num_actions, config.d1), |_| rng.random_range(-1.0..1.0));
        params.push("table", table.into_dyn());
        let mut dense = |i, o, act, name: &str| Mlp::register(LayerSpec::dense(i, o, act), name, &mut params, rng);
        let enc_param = dense(p, h, Activation::Relu, "enc.param");
        let enc_cond = dense(cond, h, Activation::Relu, "enc.cond");
        let enc_trunk = dense(h, h, Activation::Relu, "enc.trunk");
        let enc_mean = dense(h, config.d2, Activation::None, "enc.mean");
        let enc_log_std = dense(h, config.d2, Activation::None, "enc.log_std");
        let dec_latent = dense(config.d2, h, Activation::Relu, "dec.latent");
        let dec_cond = dense(cond, h, Activation::Relu, "dec.cond");
        let dec_trunk = dense(h, h, Activation::Relu, "dec.trunk");
        let dec_recon = dense(h, p, Activation::None, "dec.recon");
        let pred_spec = LayerSpec::mlp(h, &[h], st, Activation::None)?;
        let dec_pred = Mlp::register(pred_spec, "dec.pred", &mut params, rng);
        repair_collisions(params.matrix_mut(TABLE), rng);
        Ok(Self {
            spec: spec.clone(),
            config,
            params,
            enc_param,
            enc_cond,
            enc_trunk,
            enc_mean,
            enc_log_std,
            dec_latent,
            dec_cond,
            dec_trunk,
            dec_recon,
            dec_pred,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn config(&self) -> ReprConfig {
        self.config
    }

    pub fn d1(&self) -> usize {
        self.config.d1
    }

    pub fn d2(&self) -> usize {
        self.config.d2
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn table(&self) -> ArrayView2<'_, f64> {
        self.params.matrix(TABLE)
    }

    pub fn group_entries(&self, group: ParamGroup) -> Range<usize> {
        match group {
            ParamGroup::Table => TABLE..TABLE + 1,
            ParamGroup::Encoder => self.enc_param.entry_range().start..self.enc_log_std.entry_range().end,
            ParamGroup::SharedDecoder => self.dec_latent.entry_range().start..self.dec_trunk.entry_range().end,
            ParamGroup::Reconstruction => self.dec_recon.entry_range(),
            ParamGroup::Prediction => self.dec_pred.entry_range(),
        }
    }

    /// Re-separates table rows that have drifted onto each other.
    pub fn repair_table<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        repair_collisions(self.params.matrix_mut(TABLE), rng)
    }

    fn check_action(&self, k: usize) -> Result<(), ReprError> {
        if k >= self.spec.num_actions {
            return Err(ReprError::ActionOutOfRange {
                k,
                num_actions: self.spec.num_actions,
            });
        }
        Ok(())
    }

    pub fn embed_lookup(&self, k: usize) -> Result<Vec<f64>, ReprError> {
        self.check_action(k)?;
        Ok(self.table().row(k).to_vec())
    }

    pub fn embed_rows(&self, ks: &[usize]) -> Result<Array2<f64>, ReprError> {
        let table = self.table();
        let mut out = Array2::zeros((ks.len(), self.config.d1));
        for (i, &k) in ks.iter().enumerate() {
            self.check_action(k)?;
            out.row_mut(i).assign(&table.row(k));
        }
        Ok(out)
    }

    pub fn nn_decode(&self, e: &[f64]) -> usize {
        nn_decode(self.table(), e)
    }

    /// 1 on the valid parameter dims of each row's action, 0 on padding.
    pub fn param_mask(&self, ks: &[usize]) -> Array2<f64> {
        let p = self.spec.padded_param_dim();
        Array2::from_shape_fn((ks.len(), p), |(i, j)| {
            if j < self.spec.param_dims[ks[i]] {
                1.0
            } else {
                0.0
            }
        })
    }

    fn condition(&self, states: ArrayView2<'_, f64>, e: ArrayView2<'_, f64>) -> Result<Array2<f64>, ReprError> {
        if states.ncols() != self.spec.state_dim || e.ncols() != self.config.d1 || states.nrows() != e.nrows() {
            return Err(NumError::Shape(format!(
                "condition inputs: states {:?}, embeddings {:?}",
                states.dim(),
                e.dim()
            ))
            .into());
        }
        Ok(concatenate![Axis(1), states, e])
    }

    fn encoder_pass(&self, cond: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Result<EncoderPass, NumError> {
        let p = &self.params;
        let (hx, tx) = self.enc_param.forward(p, x)?;
        let (hc, tc) = self.enc_cond.forward(p, cond)?;
        let prod = &hx * &hc;
        let (t, tt) = self.enc_trunk.forward(p, prod.view())?;
        let (mu, tm) = self.enc_mean.forward(p, t.view())?;
        let (raw_log_std, tl) = self.enc_log_std.forward(p, t.view())?;
        let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok(EncoderPass {
            hx,
            hc,
            tapes: [tx, tc, tt, tm, tl],
            mu,
            log_std,
            raw_log_std,
        })
    }

    /// Returns the gradient with respect to the condition input.
    fn encoder_backward(
        &self,
        pass: &mut EncoderPass,
        dmu: ArrayView2<'_, f64>,
        mut dlog_std: Array2<f64>,
        grads: &mut ParameterSet,
    ) -> Result<Array2<f64>, NumError> {
        let p = &self.params;
        Zip::from(&mut dlog_std).and(&pass.raw_log_std).for_each(|g, &raw| {
            if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                *g = 0.0;
            }
        });
        let [tx, tc, tt, tm, tl] = &mut pass.tapes;
        let mut dt = tm.backward(p, dmu, grads)?;
        dt += &tl.backward(p, dlog_std.view(), grads)?;
        let dprod = tt.backward(p, dt.view(), grads)?;
        let dhx = &dprod * &pass.hc;
        let dhc = &dprod * &pass.hx;
        tx.backward(p, dhx.view(), grads)?;
        tc.backward(p, dhc.view(), grads)
    }

    fn decoder_pass(&self, z: ArrayView2<'_, f64>, cond: ArrayView2<'_, f64>) -> Result<DecoderPass, NumError> {
        let p = &self.params;
        let (hz, tz) = self.dec_latent.forward(p, z)?;
        let (hc, tc) = self.dec_cond.forward(p, cond)?;
        let prod = &hz * &hc;
        let (f, tt) = self.dec_trunk.forward(p, prod.view())?;
        let (recon, tr) = self.dec_recon.forward(p, f.view())?;
        let (pred, tp) = self.dec_pred.forward(p, f.view())?;
        Ok(DecoderPass {
            hz,
            hc,
            tapes: [tz, tc, tt, tr, tp],
            recon,
            pred,
        })
    }

    /// Returns gradients with respect to `(z, condition)`.
    fn decoder_backward(
        &self,
        pass: &mut DecoderPass,
        drecon: ArrayView2<'_, f64>,
        dpred: ArrayView2<'_, f64>,
        grads: &mut ParameterSet,
    ) -> Result<(Array2<f64>, Array2<f64>), NumError> {
        let p = &self.params;
        let [tz, tc, tt, tr, tp] = &mut pass.tapes;
        let mut df = tr.backward(p, drecon, grads)?;
        df += &tp.backward(p, dpred, grads)?;
        let dprod = tt.backward(p, df.view(), grads)?;
        let dhz = &dprod * &pass.hc;
        let dhc = &dprod * &pass.hz;
        let dz = tz.backward(p, dhz.view(), grads)?;
        let dcond = tc.backward(p, dhc.view(), grads)?;
        Ok((dz, dcond))
    }

    /// Encoder mean and clamped log-std for padded parameters `x`; padding
    /// beyond each row's action is zeroed before encoding.
    pub fn encode_batch(
        &self,
        states: ArrayView2<'_, f64>,
        e: ArrayView2<'_, f64>,
        x: ArrayView2<'_, f64>,
        ks: &[usize],
    ) -> Result<(Array2<f64>, Array2<f64>), ReprError> {
        let cond = self.condition(states, e)?;
        let x = &x * &self.param_mask(ks);
        let p = &self.params;
        let mut mu = Array2::zeros((cond.nrows(), self.config.d2));
        let mut log_std = Array2::zeros((cond.nrows(), self.config.d2));
        for (start, end) in chunks(cond.nrows()) {
            let rows = s![start..end, ..];
            let prod = self.enc_param.predict(p, x.slice(rows))? * self.enc_cond.predict(p, cond.slice(rows))?;
            let t = self.enc_trunk.predict(p, prod.view())?;
            mu.slice_mut(rows).assign(&self.enc_mean.predict(p, t.view())?);
            let ls = self.enc_log_std.predict(p, t.view())?;
            log_std.slice_mut(rows).assign(&ls.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)));
        }
        Ok((mu, log_std))
    }

    /// Reconstructed padded parameters and predicted state residual.
    pub fn decode_batch(
        &self,
        z: ArrayView2<'_, f64>,
        states: ArrayView2<'_, f64>,
        e: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, Array2<f64>), ReprError> {
        let cond = self.condition(states, e)?;
        let p = &self.params;
        let mut recon = Array2::zeros((cond.nrows(), self.spec.padded_param_dim()));
        let mut pred = Array2::zeros((cond.nrows(), self.spec.state_dim));
        for (start, end) in chunks(cond.nrows()) {
            let rows = s![start..end, ..];
            let prod = self.dec_latent.predict(p, z.slice(rows))? * self.dec_cond.predict(p, cond.slice(rows))?;
            let f = self.dec_trunk.predict(p, prod.view())?;
            recon.slice_mut(rows).assign(&self.dec_recon.predict(p, f.view())?);
            pred.slice_mut(rows).assign(&self.dec_pred.predict(p, f.view())?);
        }
        Ok((recon, pred))
    }

    /// Single-sample encoding; `x` may be unpadded or padded.
    pub fn encode(&self, s: &[f64], k: usize, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ReprError> {
        self.check_action(k)?;
        let p = self.spec.padded_param_dim();
        if x.len() != self.spec.param_dims[k] && x.len() != p {
            return Err(NumError::Shape(format!("action {k} takes {} parameters, got {}", self.spec.param_dims[k], x.len())).into());
        }
        let mut padded = Array2::zeros((1, p));
        for (j, &v) in x.iter().enumerate() {
            padded[[0, j]] = v;
        }
        let e = self.embed_rows(&[k])?;
        let (mu, ls) = self.encode_batch(row(s)?, e.view(), padded.view(), &[k])?;
        Ok((mu.into_raw_vec_and_offset().0, ls.into_raw_vec_and_offset().0))
    }

    /// Single-sample decoding into `(x̃, δ̃)`.
    pub fn decode_and_predict(&self, z: &[f64], s: &[f64], e: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ReprError> {
        let (recon, pred) = self.decode_batch(row(z)?, row(s)?, row(e)?)?;
        Ok((recon.into_raw_vec_and_offset().0, pred.into_raw_vec_and_offset().0))
    }

    fn loss_pass(&self, batch: &ReprBatch, noise: ArrayView2<'_, f64>, beta: f64, kl_weight: f64) -> Result<LossPass, ReprError> {
        if batch.is_empty() {
            return Err(ReprError::EmptyBatch);
        }
        let p = self.spec.padded_param_dim();
        if batch.params.ncols() != p {
            return Err(NumError::Shape(format!("parameters have {} columns, expected {p}", batch.params.ncols())).into());
        }
        let e = self.embed_rows(&batch.ks)?;
        let cond = self.condition(batch.states.view(), e.view())?;
        let mask = self.param_mask(&batch.ks);
        let x = &batch.params * &mask;
        let enc = self.encoder_pass(cond.view(), x.view())?;
        let z = reparam_sample(enc.mu.view(), enc.log_std.view(), noise)?;
        let dec = self.decoder_pass(z.view(), cond.view())?;
        let residual = batch.residuals();

        let n = batch.len() as f64;
        let masked_recon = &dec.recon * &mask;
        let recon = squared_row_error(masked_recon.view(), x.view()).iter().sum::<f64>() / n;
        let (kl_rows, _, _) = kl_std_normal_rows(enc.mu.view(), enc.log_std.view());
        let kl = kl_rows.iter().sum::<f64>() / n;
        let dynamics = squared_row_error(dec.pred.view(), residual.view()).iter().sum::<f64>() / n;
        let vae = recon + kl_weight * kl;
        let loss = ReprLoss {
            total: vae + beta * dynamics,
            vae,
            dynamics,
            recon,
            kl,
        };
        Ok(LossPass {
            enc,
            dec,
            mask,
            x,
            residual,
            loss,
        })
    }

    /// Loss with frozen reparameterization `noise` (`batch × d2`) plus a
    /// signature of every ReLU and clamp pattern touched.
    pub fn loss(&self, batch: &ReprBatch, noise: ArrayView2<'_, f64>, beta: f64, kl_weight: f64) -> Result<(ReprLoss, u64), ReprError> {
        let pass = self.loss_pass(batch, noise, beta, kl_weight)?;
        let mut sig = signature_of(&pass.enc.tapes, 0);
        sig = signature_of(&pass.dec.tapes, sig);
        for &v in pass.enc.raw_log_std.iter() {
            let region = if v < LOG_STD_MIN {
                1
            } else if v > LOG_STD_MAX {
                2
            } else {
                3
            };
            sig = (sig ^ region).wrapping_mul(0x0000_0100_0000_01b3);
        }
        Ok((pass.loss, sig))
    }

    /// Loss and its gradient with respect to every parameter, including the
    /// table rows of the batch's actions.
    pub fn loss_and_grads(
        &self,
        batch: &ReprBatch,
        noise: ArrayView2<'_, f64>,
        beta: f64,
        kl_weight: f64,
    ) -> Result<(ReprLoss, ParameterSet), ReprError> {
        let mut pass = self.loss_pass(batch, noise, beta, kl_weight)?;
        let n = batch.len() as f64;
        let mut grads = self.params.zeros_like();

        let drecon = (&pass.dec.recon * &pass.mask - &pass.x) * &pass.mask * (2.0 / n);
        let dpred = (&pass.dec.pred - &pass.residual) * (2.0 * beta / n);
        let (dz, dcond_dec) = self.decoder_backward(&mut pass.dec, drecon.view(), dpred.view(), &mut grads)?;

        let (mut dmu, mut dls) = reparam_backward(pass.enc.log_std.view(), noise, dz.view());
        let (_, kl_dmu, kl_dls) = kl_std_normal_rows(pass.enc.mu.view(), pass.enc.log_std.view());
        dmu.scaled_add(kl_weight / n, &kl_dmu);
        dls.scaled_add(kl_weight / n, &kl_dls);
        let dcond_enc = self.encoder_backward(&mut pass.enc, dmu.view(), dls, &mut grads)?;

        let dcond = dcond_enc + dcond_dec;
        let st = self.spec.state_dim;
        let mut gt = grads.matrix_mut(TABLE);
        for (i, &k) in batch.ks.iter().enumerate() {
            let mut r = gt.row_mut(k);
            r += &dcond.slice(s![i, st..]);
        }
        Ok((pass.loss, grads))
    }
}

fn row(v: &[f64]) -> Result<ArrayView2<'_, f64>, NumError> {
    ArrayView2::from_shape((1, v.len()), v).map_err(|e| NumError::Shape(e.to_string()))
}
