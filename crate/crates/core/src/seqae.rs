//! History/future dual-encoder autoencoder over window profiles.
//!
//! Each encoder runs three parallel same-padded convolutions (widths 5, 7, 9)
//! over the profile, squeezes the 24 channels to 4 with a pointwise
//! projection, flattens, and maps through a two-layer perceptron. One decoder
//! maps the concatenated latents back onto the whole window canvas.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Container;
use crate::error::{contract, Error, Result};
use crate::intensity::IntensityProfile;
use crate::numcore::{
    adam_step, stream_rng, AdamState, Bound, Conv1d, Dense, Graph, ParamStore, Tensor, Var,
};

pub const HISTORY_DIM: usize = 32;
pub const FUTURE_DIM: usize = 128;
pub const KERNEL_WIDTHS: [usize; 3] = [5, 7, 9];
pub const FILTERS: usize = 8;
pub const BOTTLENECK: usize = 4;
pub const DECODER_HIDDEN: usize = 256;
pub const BATCH_SIZE: usize = 16;

/// Profiles laid on a fixed zero-padded canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileBatch {
    pub ids: Vec<String>,
    /// `[s, canvas]`, padded entries are 0.
    pub values: Vec<Vec<f64>>,
    /// Real (unpadded) length of each row.
    pub lengths: Vec<usize>,
    pub canvas: usize,
    /// Number of leading windows that form the history segment.
    pub h_len: usize,
}

impl ProfileBatch {
    /// Truncates or zero-pads each profile to `canvas` windows.
    pub fn from_profiles(
        profiles: &[IntensityProfile],
        canvas: usize,
        h_len: usize,
    ) -> Result<Self> {
        if h_len == 0 || h_len >= canvas {
            return Err(contract(format!(
                "history length {h_len} must lie in 1..{canvas}"
            )));
        }
        let mut batch = Self {
            ids: Vec::new(),
            values: Vec::new(),
            lengths: Vec::new(),
            canvas,
            h_len,
        };
        for p in profiles {
            let len = p.windows.len().min(canvas);
            let mut row = vec![0.0; canvas];
            row[..len].copy_from_slice(&p.windows[..len]);
            batch.ids.push(p.thread_id.clone());
            batch.values.push(row);
            batch.lengths.push(len);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mask(&self, row: usize) -> Vec<f64> {
        (0..self.canvas)
            .map(|k| if k < self.lengths[row] { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            values: rows.iter().map(|&r| self.values[r].clone()).collect(),
            lengths: rows.iter().map(|&r| self.lengths[r]).collect(),
            canvas: self.canvas,
            h_len: self.h_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPair {
    pub thread_id: String,
    pub history: Vec<f64>,
    pub future: Vec<f64>,
}

impl LatentPair {
    pub fn joint(&self) -> Vec<f64> {
        [self.history.as_slice(), self.future.as_slice()].concat()
    }
}

/// Shape knobs; defaults follow the reference architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct AeConfig {
    /// Window canvas length (`n − δ`).
    pub canvas: usize,
    /// History windows (`t_h − δ`).
    pub h_len: usize,
    /// Largest value a window can take; decoder outputs lie in `[0, upper]`.
    pub upper: f64,
    pub history_hidden: usize,
    pub future_hidden: usize,
}

impl AeConfig {
    pub fn new(canvas: usize, h_len: usize, upper: f64) -> Self {
        Self {
            canvas,
            h_len,
            upper,
            history_hidden: 64,
            future_hidden: 256,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.h_len == 0 || self.h_len >= self.canvas {
            return Err(contract(format!(
                "history length {} must lie in 1..{}",
                self.h_len, self.canvas
            )));
        }
        if !(self.upper > 0.0 && self.upper.is_finite()) {
            return Err(contract("window upper bound must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct InceptionEncoder {
    convs: Vec<Conv1d>,
    squeeze: Dense,
    hidden: Dense,
    out: Dense,
    len: usize,
}

impl InceptionEncoder {
    fn new(
        store: &mut ParamStore,
        name: &str,
        len: usize,
        hidden: usize,
        out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let convs = KERNEL_WIDTHS
            .iter()
            .map(|&k| Conv1d::new(store, &format!("{name}.conv{k}"), k, 1, FILTERS, rng))
            .collect();
        let squeeze = Dense::new(
            store,
            &format!("{name}.squeeze"),
            FILTERS * KERNEL_WIDTHS.len(),
            BOTTLENECK,
            rng,
        );
        let hidden_layer = Dense::new(store, &format!("{name}.fc1"), len * BOTTLENECK, hidden, rng);
        let out = Dense::new(store, &format!("{name}.fc2"), hidden, out, rng);
        Self {
            convs,
            squeeze,
            hidden: hidden_layer,
            out,
            len,
        }
    }

    /// `[b, len]` -> `[b, out]`.
    fn forward(&self, g: &Graph, p: &Bound, x: Var, b: usize) -> Var {
        let x = g.reshape(x, &[b, self.len, 1]);
        let branches: Vec<Var> = self.convs.iter().map(|c| c.forward(g, p, x)).collect();
        let mixed = g.relu(g.concat(&branches));
        let flat = g.reshape(mixed, &[b * self.len, FILTERS * KERNEL_WIDTHS.len()]);
        let squeezed = self.squeeze.forward(g, p, flat);
        let flat = g.reshape(squeezed, &[b, self.len * BOTTLENECK]);
        self.out
            .forward(g, p, g.relu(self.hidden.forward(g, p, flat)))
    }
}

#[derive(Clone, Debug)]
pub struct AutoencoderModel {
    pub config: AeConfig,
    store: ParamStore,
    history: InceptionEncoder,
    future: InceptionEncoder,
    dec_hidden: Dense,
    dec_out: Dense,
    pub seed: u64,
    /// Mean training loss per epoch (scaled masked MSE).
    pub loss_history: Vec<f64>,
}

impl PartialEq for AutoencoderModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.store == other.store && self.seed == other.seed
    }
}

impl AutoencoderModel {
    pub fn new(config: AeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, "autoencoder-init");
        let mut store = ParamStore::new();
        let f_len = config.canvas - config.h_len;
        let history = InceptionEncoder::new(
            &mut store,
            "enc_h",
            config.h_len,
            config.history_hidden,
            HISTORY_DIM,
            &mut rng,
        );
        let future = InceptionEncoder::new(
            &mut store,
            "enc_f",
            f_len,
            config.future_hidden,
            FUTURE_DIM,
            &mut rng,
        );
        let dec_hidden = Dense::new(
            &mut store,
            "dec.fc1",
            HISTORY_DIM + FUTURE_DIM,
            DECODER_HIDDEN,
            &mut rng,
        );
        let dec_out = Dense::new(
            &mut store,
            "dec.fc2",
            DECODER_HIDDEN,
            config.canvas,
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            history,
            future,
            dec_hidden,
            dec_out,
            seed,
            loss_history: Vec::new(),
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn future_len(&self) -> usize {
        self.config.canvas - self.config.h_len
    }

    fn scaled_rows(&self, rows: &[&[f64]], width: usize, offset: usize) -> Tensor {
        let inv = 1.0 / self.config.upper;
        let data = rows
            .iter()
            .flat_map(|r| r[offset..offset + width].iter().map(|v| v * inv))
            .collect();
        Tensor::matrix(rows.len(), width, data)
    }

    /// Builds the encoder/decoder graph; `inputs` rows are already masked
    /// canvases. Returns `(x_h, x_f, reconstruction in [0,1])`.
    fn forward(&self, g: &Graph, p: &Bound, inputs: &[&[f64]]) -> (Var, Var, Var) {
        let (b, h) = (inputs.len(), self.config.h_len);
        let xh_in = g.leaf(self.scaled_rows(inputs, h, 0));
        let xf_in = g.leaf(self.scaled_rows(inputs, self.future_len(), h));
        let xh = self.history.forward(g, p, xh_in, b);
        let xf = self.future.forward(g, p, xf_in, b);
        let recon = self.decode_var(g, p, g.concat(&[xh, xf]));
        (xh, xf, recon)
    }

    fn decode_var(&self, g: &Graph, p: &Bound, latent: Var) -> Var {
        let hidden = g.relu(self.dec_hidden.forward(g, p, latent));
        g.sigmoid(self.dec_out.forward(g, p, hidden))
    }

    fn encode_segment(
        &self,
        windows: &[f64],
        len: usize,
        which: &InceptionEncoder,
        what: &str,
    ) -> Result<Vec<f64>> {
        if windows.is_empty() {
            return Err(Error::Contract(format!(
                "{what} input has no real windows (thread too short)"
            )));
        }
        if windows.iter().any(|v| !v.is_finite()) {
            return Err(contract(format!("{what} input contains non-finite values")));
        }
        let mut row = vec![0.0; len];
        let take = windows.len().min(len);
        row[..take].copy_from_slice(&windows[..take]);
        let g = Graph::new();
        let p = self.store.bind(&g);
        let x = g.leaf(self.scaled_rows(&[&row], len, 0));
        let out = which.forward(&g, &p, x, 1);
        let v = g.value(out).data().to_vec();
        Ok(v)
    }

    /// Latent of the first `h_len` windows (shorter input is zero-padded).
    pub fn encode_history(&self, windows: &[f64]) -> Result<Vec<f64>> {
        self.encode_segment(windows, self.config.h_len, &self.history, "history")
    }

    /// Latent of the windows after the history segment.
    pub fn encode_future(&self, windows: &[f64]) -> Result<Vec<f64>> {
        self.encode_segment(windows, self.future_len(), &self.future, "future")
    }

    /// Decodes `x_h ⊕ x_f` into a full canvas of window values.
    pub fn decode(&self, latent: &[f64]) -> Result<Vec<f64>> {
        if latent.len() != HISTORY_DIM + FUTURE_DIM {
            return Err(contract(format!(
                "decoder expects {} inputs, got {}",
                HISTORY_DIM + FUTURE_DIM,
                latent.len()
            )));
        }
        let g = Graph::new();
        let p = self.store.bind(&g);
        let out = self.decode_var(&g, &p, g.leaf(Tensor::row(latent.to_vec())));
        let v = g
            .value(out)
            .data()
            .iter()
            .map(|v| v * self.config.upper)
            .collect();
        Ok(v)
    }

    fn masked_rows(batch: &ProfileBatch, rows: &[usize]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&r| {
                let mut v = batch.values[r].clone();
                v[batch.lengths[r]..].iter_mut().for_each(|x| *x = 0.0);
                v
            })
            .collect()
    }

    /// Latents of every row in `batch`.
    pub fn encode_batch(&self, batch: &ProfileBatch) -> Result<Vec<LatentPair>> {
        self.check_batch(batch)?;
        let mut out = Vec::with_capacity(batch.len());
        let all: Vec<usize> = (0..batch.len()).collect();
        for chunk in all.chunks(64) {
            let rows = Self::masked_rows(batch, chunk);
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let g = Graph::new();
            let p = self.store.bind(&g);
            let b = refs.len();
            let xh = self.history.forward(
                &g,
                &p,
                g.leaf(self.scaled_rows(&refs, self.config.h_len, 0)),
                b,
            );
            let xf = self.future.forward(
                &g,
                &p,
                g.leaf(self.scaled_rows(&refs, self.future_len(), self.config.h_len)),
                b,
            );
            let (vh, vf) = (g.value(xh), g.value(xf));
            for (i, &r) in chunk.iter().enumerate() {
                out.push(LatentPair {
                    thread_id: batch.ids[r].clone(),
                    history: vh.data()[i * HISTORY_DIM..(i + 1) * HISTORY_DIM].to_vec(),
                    future: vf.data()[i * FUTURE_DIM..(i + 1) * FUTURE_DIM].to_vec(),
                });
            }
        }
        Ok(out)
    }

    fn check_batch(&self, batch: &ProfileBatch) -> Result<()> {
        if batch.canvas != self.config.canvas || batch.h_len != self.config.h_len {
            return Err(contract(format!(
                "batch canvas {}/{} does not match model {}/{}",
                batch.canvas, batch.h_len, self.config.canvas, self.config.h_len
            )));
        }
        Ok(())
    }

    /// Masked scaled MSE on `rows`, as a graph node.
    fn loss_var(&self, g: &Graph, p: &Bound, batch: &ProfileBatch, rows: &[usize]) -> Var {
        let inputs = Self::masked_rows(batch, rows);
        let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let (_, _, recon) = self.forward(g, p, &refs);
        let canvas = self.config.canvas;
        let target = g.leaf(self.scaled_rows(&refs, canvas, 0));
        let mask: Vec<f64> = rows.iter().flat_map(|&r| batch.mask(r)).collect();
        let real: f64 = mask.iter().sum();
        let mask = g.leaf(Tensor::matrix(rows.len(), canvas, mask));
        let diff = g.mul(g.sub(recon, target), mask);
        g.scale(g.sum(g.mul(diff, diff)), 1.0 / real.max(1.0))
    }

    /// Masked mean squared error on the `[0, 1]`-scaled canvas.
    pub fn masked_loss(&self, batch: &ProfileBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let (mut total, mut count) = (0.0, 0.0);
        let all: Vec<usize> = (0..batch.len()).collect();
        for chunk in all.chunks(64) {
            let g = Graph::new();
            let p = self.store.bind(&g);
            let real: f64 = chunk.iter().map(|&r| batch.lengths[r] as f64).sum();
            total += g.value(self.loss_var(&g, &p, batch, chunk)).item() * real.max(1.0);
            count += real;
        }
        Ok(if count > 0.0 { total / count } else { 0.0 })
    }

    /// Reconstruction RMSE over real windows, in window units.
    pub fn masked_rmse(&self, batch: &ProfileBatch) -> Result<f64> {
        Ok(self.masked_loss(batch)?.sqrt() * self.config.upper)
    }

    /// Continues training for `epochs` passes of shuffled minibatches.
    /// Gradient of [`masked_loss`](Self::masked_loss) for every parameter.
    pub fn loss_gradients(&self, batch: &ProfileBatch) -> Result<Vec<Tensor>> {
        self.check_batch(batch)?;
        let mut total: Vec<Tensor> = self
            .store
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        let all: Vec<usize> = (0..batch.len()).collect();
        let count: f64 = batch.lengths.iter().map(|&l| l as f64).sum();
        for chunk in all.chunks(64) {
            let g = Graph::new();
            let p = self.store.bind(&g);
            let real: f64 = chunk.iter().map(|&r| batch.lengths[r] as f64).sum();
            let weight = if count > 0.0 {
                real.max(1.0) / count
            } else {
                0.0
            };
            let grads = g.grad(self.loss_var(&g, &p, batch, chunk), p.vars())?;
            for (acc, gr) in total.iter_mut().zip(grads) {
                acc.data_mut()
                    .iter_mut()
                    .zip(gr.data())
                    .for_each(|(a, b)| *a += weight * b);
            }
        }
        Ok(total)
    }

    pub fn fit(&mut self, batch: &ProfileBatch, epochs: usize, lr: f64) -> Result<()> {
        self.check_batch(batch)?;
        let usable: Vec<usize> = (0..batch.len()).filter(|&r| batch.lengths[r] > 0).collect();
        if usable.len() < 2 {
            return Err(Error::Config(
                "autoencoder training needs at least 2 non-empty profiles".into(),
            ));
        }
        let mut rng = stream_rng(self.seed, "autoencoder-shuffle");
        let mut adam = AdamState::new(self.store.tensors());
        for _ in 0..epochs {
            let mut order = usable.clone();
            order.shuffle(&mut rng);
            let (mut total, mut weight) = (0.0, 0.0);
            for chunk in order.chunks(BATCH_SIZE) {
                let g = Graph::new();
                let p = self.store.bind(&g);
                let loss = self.loss_var(&g, &p, batch, chunk);
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Stage {
                        stage: "autoencoder",
                        cause: "loss became non-finite".into(),
                    });
                }
                let grads = g.grad(loss, p.vars())?;
                adam_step(self.store.tensors_mut(), &grads, &mut adam, lr)?;
                let real: f64 = chunk.iter().map(|&r| batch.lengths[r] as f64).sum();
                total += value * real;
                weight += real;
            }
            self.loss_history.push(total / weight);
        }
        Ok(())
    }

    pub fn save(&self, prefix: &str, out: &mut Container) {
        out.put_meta(&format!("{prefix}.canvas"), self.config.canvas);
        out.put_meta(&format!("{prefix}.h_len"), self.config.h_len);
        out.put_meta(&format!("{prefix}.upper"), self.config.upper);
        out.put_meta(
            &format!("{prefix}.history_hidden"),
            self.config.history_hidden,
        );
        out.put_meta(
            &format!("{prefix}.future_hidden"),
            self.config.future_hidden,
        );
        out.put_meta(&format!("{prefix}.seed"), self.seed);
        out.put_tensor(
            &format!("{prefix}.loss_history"),
            &Tensor::vector(self.loss_history.clone()),
        );
        self.store.save(prefix, out);
    }

    pub fn load(prefix: &str, src: &Container) -> Result<Self> {
        let config = AeConfig {
            canvas: src.meta_parse(&format!("{prefix}.canvas"))?,
            h_len: src.meta_parse(&format!("{prefix}.h_len"))?,
            upper: src.meta_parse(&format!("{prefix}.upper"))?,
            history_hidden: src.meta_parse(&format!("{prefix}.history_hidden"))?,
            future_hidden: src.meta_parse(&format!("{prefix}.future_hidden"))?,
        };
        let mut model = Self::new(config, src.meta_parse(&format!("{prefix}.seed"))?)?;
        model.store.load(prefix, src)?;
        model.loss_history = src.tensor(&format!("{prefix}.loss_history"))?.into_data();
        Ok(model)
    }
}

/// Fresh model trained on `batch`.
pub fn train_autoencoder(
    batch: &ProfileBatch,
    config: AeConfig,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<AutoencoderModel> {
    if batch.is_empty() {
        return Err(Error::Config("autoencoder training batch is empty".into()));
    }
    let mut model = AutoencoderModel::new(config, seed)?;
    model.fit(batch, epochs, lr)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch(rows: usize, canvas: usize, h_len: usize) -> ProfileBatch {
        let profiles: Vec<IntensityProfile> = (0..rows)
            .map(|r| IntensityProfile {
                thread_id: format!("t{r}"),
                delta: 2,
                windows: (0..canvas - r % 3)
                    .map(|k| ((k + r) % 5) as f64 * 0.4)
                    .collect(),
                too_short: false,
            })
            .collect();
        ProfileBatch::from_profiles(&profiles, canvas, h_len).unwrap()
    }

    #[test]
    fn shapes_and_bounds() {
        let m = AutoencoderModel::new(AeConfig::new(20, 5, 2.0), 1).unwrap();
        assert_eq!(m.encode_history(&[1.0; 5]).unwrap().len(), HISTORY_DIM);
        assert_eq!(m.encode_future(&[1.0; 15]).unwrap().len(), FUTURE_DIM);
        let out = m.decode(&[0.3; 160]).unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.iter().all(|v| (0.0..=2.0).contains(v)));
        assert!(m.decode(&[0.0; 159]).is_err());
        assert!(m.encode_history(&[]).is_err());
        assert_eq!(
            m.encode_history(&[0.5, 1.0]).unwrap(),
            m.encode_history(&[0.5, 1.0]).unwrap()
        );
        let zeros = m.encode_future(&[0.0; 15]).unwrap();
        let ones = m.encode_future(&[1.0; 15]).unwrap();
        assert!(zeros.iter().zip(&ones).any(|(a, b)| a != b));
    }

    #[test]
    fn batch_encoding_matches_single() {
        let m = AutoencoderModel::new(AeConfig::new(12, 4, 2.0), 3).unwrap();
        let b = toy_batch(3, 12, 4);
        let pairs = m.encode_batch(&b).unwrap();
        for (r, pair) in pairs.iter().enumerate() {
            let len = b.lengths[r];
            let h = m.encode_history(&b.values[r][..4]).unwrap();
            let f = m.encode_future(&b.values[r][4..len]).unwrap();
            for (a, e) in pair
                .history
                .iter()
                .zip(&h)
                .chain(pair.future.iter().zip(&f))
            {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padding_does_not_change_loss() {
        let m = AutoencoderModel::new(AeConfig::new(12, 4, 2.0), 3).unwrap();
        let mut b = toy_batch(4, 12, 4);
        let before = m.masked_loss(&b).unwrap();
        for (r, row) in b.values.iter_mut().enumerate() {
            let len = b.lengths[r];
            row[len..].iter_mut().for_each(|v| *v = 7.5);
        }
        assert_eq!(m.masked_loss(&b).unwrap(), before);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let b = toy_batch(6, 12, 4);
        let a = train_autoencoder(&b, AeConfig::new(12, 4, 2.0), 30, 0.005, 9).unwrap();
        let c = train_autoencoder(&b, AeConfig::new(12, 4, 2.0), 30, 0.005, 9).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.loss_history.len(), 30);
        assert!(a.loss_history.last().unwrap() < &a.loss_history[0]);
        let one = train_autoencoder(&b, AeConfig::new(12, 4, 2.0), 1, 0.001, 9).unwrap();
        assert_eq!(one.loss_history.len(), 1);
        assert!(train_autoencoder(&b.subset(&[]), AeConfig::new(12, 4, 2.0), 1, 0.001, 9).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let b = toy_batch(4, 12, 4);
        let m = train_autoencoder(&b, AeConfig::new(12, 4, 2.0), 2, 0.001, 5).unwrap();
        let mut c = Container::new();
        m.save("ae", &mut c);
        let back = AutoencoderModel::load("ae", &c).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.loss_history, m.loss_history);
    }
}
