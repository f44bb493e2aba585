use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model_spec::{ActionPool, STATE_WIDTH};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weights of one GRU layer. Gate rows are stacked `[update; reset;
/// candidate]`, each `hidden` rows tall.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    /// `[3 * hidden][input]`
    pub w: Vec<f64>,
    /// `[3 * hidden][hidden]`
    pub u: Vec<f64>,
    /// `[3 * hidden]`
    pub b: Vec<f64>,
}

struct CellCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

fn matvec_add(out: &mut [f64], m: &[f64], cols: usize, row0: usize, v: &[f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[(row0 + i) * cols..(row0 + i + 1) * cols];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl GruCell {
    fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> GruCell {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-k..k)).collect::<Vec<f64>>();
        GruCell {
            input,
            hidden,
            w: draw(3 * hidden * input),
            u: draw(3 * hidden * hidden),
            b: draw(3 * hidden),
        }
    }

    fn zeros(input: usize, hidden: usize) -> GruCell {
        GruCell {
            input,
            hidden,
            w: vec![0.0; 3 * hidden * input],
            u: vec![0.0; 3 * hidden * hidden],
            b: vec![0.0; 3 * hidden],
        }
    }

    fn forward(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, CellCache) {
        let hd = self.hidden;
        let gate = |g: usize, hv: &[f64]| {
            let mut a = self.b[g * hd..(g + 1) * hd].to_vec();
            matvec_add(&mut a, &self.w, self.input, g * hd, x);
            matvec_add(&mut a, &self.u, hd, g * hd, hv);
            a
        };
        let z: Vec<f64> = gate(0, h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(1, h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = gate(2, &rh).into_iter().map(f64::tanh).collect();
        let h_new = (0..hd).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect();
        (
            h_new,
            CellCache {
                x: x.to_vec(),
                h_prev: h.to_vec(),
                z,
                r,
                n,
                rh,
            },
        )
    }

    /// Accumulate parameter gradients for upstream gradient `dh` on the new
    /// hidden state. Returns `(d input, d previous hidden)`.
    fn backward(&self, c: &CellCache, dh: &[f64], grad: &mut GruCell) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let ni = self.input;
        let mut da = vec![0.0; 3 * hd];
        let mut dh_prev: Vec<f64> = (0..hd).map(|i| dh[i] * c.z[i]).collect();
        for i in 0..hd {
            let dz = dh[i] * (c.h_prev[i] - c.n[i]);
            da[i] = dz * c.z[i] * (1.0 - c.z[i]);
            let dn = dh[i] * (1.0 - c.z[i]);
            da[2 * hd + i] = dn * (1.0 - c.n[i] * c.n[i]);
        }
        // Candidate gate sees r * h through U_n.
        let mut drh = vec![0.0; hd];
        for i in 0..hd {
            let g = da[2 * hd + i];
            if g == 0.0 {
                continue;
            }
            for j in 0..hd {
                drh[j] += self.u[(2 * hd + i) * hd + j] * g;
                grad.u[(2 * hd + i) * hd + j] += g * c.rh[j];
            }
        }
        for j in 0..hd {
            let dr = drh[j] * c.h_prev[j];
            da[hd + j] = dr * c.r[j] * (1.0 - c.r[j]);
            dh_prev[j] += drh[j] * c.r[j];
        }
        for g in 0..2 {
            for i in 0..hd {
                let a = da[g * hd + i];
                if a == 0.0 {
                    continue;
                }
                let row = g * hd + i;
                for j in 0..hd {
                    grad.u[row * hd + j] += a * c.h_prev[j];
                    dh_prev[j] += self.u[row * hd + j] * a;
                }
            }
        }
        let mut dx = vec![0.0; ni];
        for (row, &a) in da.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            grad.b[row] += a;
            for j in 0..ni {
                grad.w[row * ni + j] += a * c.x[j];
                dx[j] += self.w[row * ni + j] * a;
            }
        }
        (dx, dh_prev)
    }
}

/// Recurrent policy: stacked GRU layers read one layer descriptor per step
/// (plus a one-hot of the previous action) and a dense head maps the top
/// hidden state to logits over the action pool.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub cells: Vec<GruCell>,
    /// `[ActionPool::SIZE][hidden]`
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
    state_width: usize,
}

/// One step's cached activations.
struct StepCache {
    cells: Vec<CellCache>,
    top: Vec<f64>,
    probs: Vec<f64>,
}

impl Policy {
    /// `layers` stacked GRU layers of width `hidden` over layer-descriptor
    /// states, randomly initialized from `seed`.
    pub fn new(hidden: usize, layers: usize, seed: u64) -> Policy {
        Policy::with_state_width(STATE_WIDTH, hidden, layers, seed)
    }

    pub fn with_state_width(state_width: usize, hidden: usize, layers: usize, seed: u64) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = state_width + ActionPool::SIZE;
        let cells = (0..layers)
            .map(|l| GruCell::new(if l == 0 { input } else { hidden }, hidden, &mut rng))
            .collect();
        let k = 1.0 / (hidden as f64).sqrt();
        let head_w = (0..ActionPool::SIZE * hidden).map(|_| rng.random_range(-k..k)).collect();
        Policy {
            cells,
            head_w,
            head_b: vec![0.0; ActionPool::SIZE],
            state_width,
        }
    }

    /// All-zero parameters: every step yields the uniform distribution.
    pub fn zeros(state_width: usize, hidden: usize, layers: usize) -> Policy {
        let input = state_width + ActionPool::SIZE;
        Policy {
            cells: (0..layers)
                .map(|l| GruCell::zeros(if l == 0 { input } else { hidden }, hidden))
                .collect(),
            head_w: vec![0.0; ActionPool::SIZE * hidden],
            head_b: vec![0.0; ActionPool::SIZE],
            state_width,
        }
    }

    pub fn zeros_like(&self) -> Policy {
        Policy::zeros(self.state_width, self.hidden(), self.cells.len())
    }

    pub fn hidden(&self) -> usize {
        self.cells.first().map_or(self.head_w.len() / ActionPool::SIZE, |c| c.hidden)
    }

    pub fn state_width(&self) -> usize {
        self.state_width
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (l, c) in self.cells.iter().enumerate() {
            out.push((format!("gru{l}.w"), &c.w));
            out.push((format!("gru{l}.u"), &c.u));
            out.push((format!("gru{l}.b"), &c.b));
        }
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for c in &mut self.cells {
            out.push(&mut c.w);
            out.push(&mut c.u);
            out.push(&mut c.b);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    fn check_states(&self, states: &[Vec<f64>]) -> Result<()> {
        if states.is_empty() {
            return Err(Error::input("empty state sequence"));
        }
        if let Some(s) = states.iter().find(|s| s.len() != self.state_width) {
            return Err(Error::input(format!(
                "state width {} does not match policy width {}",
                s.len(),
                self.state_width
            )));
        }
        Ok(())
    }

    fn step(&self, hidden: &mut [Vec<f64>], state: &[f64], prev_action: Option<usize>) -> StepCache {
        let mut x = state.to_vec();
        let mut feedback = vec![0.0; ActionPool::SIZE];
        if let Some(a) = prev_action {
            feedback[a] = 1.0;
        }
        x.extend(feedback);
        let mut caches = Vec::with_capacity(self.cells.len());
        for (l, cell) in self.cells.iter().enumerate() {
            let (h_new, cache) = cell.forward(&x, &hidden[l]);
            caches.push(cache);
            hidden[l] = h_new.clone();
            x = h_new;
        }
        let mut logits = self.head_b.clone();
        matvec_add(&mut logits, &self.head_w, self.hidden(), 0, &x);
        StepCache {
            cells: caches,
            top: x,
            probs: softmax(&logits),
        }
    }

    fn initial_hidden(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.hidden()]; self.cells.len()]
    }

    /// Action distributions for each state, with `actions[t - 1]` fed back
    /// at step `t`. `actions` must cover at least `states.len() - 1` steps.
    pub fn distributions(&self, states: &[Vec<f64>], actions: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(self.rollout(states, actions)?.into_iter().map(|c| c.probs).collect())
    }

    fn rollout(&self, states: &[Vec<f64>], actions: &[usize]) -> Result<Vec<StepCache>> {
        self.check_states(states)?;
        if actions.len() + 1 < states.len() {
            return Err(Error::input(format!(
                "{} actions cannot drive {} steps",
                actions.len(),
                states.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= ActionPool::SIZE) {
            return Err(Error::input(format!("action {a} outside the pool")));
        }
        let mut hidden = self.initial_hidden();
        let mut out = Vec::with_capacity(states.len());
        for (t, s) in states.iter().enumerate() {
            let prev = t.checked_sub(1).map(|p| actions[p]);
            out.push(self.step(&mut hidden, s, prev));
        }
        Ok(out)
    }

    /// Sample one action per state. Returns the actions and the natural-log
    /// probability of each.
    pub fn sample<R: Rng>(&self, states: &[Vec<f64>], rng: &mut R) -> Result<(Vec<usize>, Vec<f64>)> {
        self.check_states(states)?;
        let mut hidden = self.initial_hidden();
        let mut actions = Vec::with_capacity(states.len());
        let mut logprobs = Vec::with_capacity(states.len());
        for s in states {
            let cache = self.step(&mut hidden, s, actions.last().copied());
            let a = sample_categorical(&cache.probs, rng.random::<f64>());
            logprobs.push(cache.probs[a].ln());
            actions.push(a);
        }
        Ok((actions, logprobs))
    }

    /// `sum_t log pi(a_t | s_t)` and its gradient w.r.t. every parameter,
    /// by backprop through time.
    pub fn log_prob_grad(&self, states: &[Vec<f64>], actions: &[usize]) -> Result<(f64, Policy)> {
        if actions.len() != states.len() {
            return Err(Error::input(format!("{} actions for {} states", actions.len(), states.len())));
        }
        let caches = self.rollout(states, actions)?;
        let mut grad = self.zeros_like();
        let hd = self.hidden();
        let layers = self.cells.len();
        let mut logp = 0.0;
        let mut dh_next = vec![vec![0.0; hd]; layers];
        for t in (0..caches.len()).rev() {
            let c = &caches[t];
            logp += c.probs[actions[t]].ln();
            let dlogits: Vec<f64> = (0..ActionPool::SIZE)
                .map(|k| if k == actions[t] { 1.0 } else { 0.0 } - c.probs[k])
                .collect();
            let mut dtop = dh_next[layers - 1].clone();
            for (k, &g) in dlogits.iter().enumerate() {
                grad.head_b[k] += g;
                for j in 0..hd {
                    grad.head_w[k * hd + j] += g * c.top[j];
                    dtop[j] += self.head_w[k * hd + j] * g;
                }
            }
            let mut dh = dtop;
            for l in (0..layers).rev() {
                let (dx, dprev) = self.cells[l].backward(&c.cells[l], &dh, &mut grad.cells[l]);
                dh_next[l] = dprev;
                if l > 0 {
                    dh = dx.iter().zip(&dh_next[l - 1]).map(|(a, b)| a + b).collect();
                }
            }
        }
        Ok((logp, grad))
    }

    /// `sum_t log pi(a_t | s_t)` only.
    pub fn log_prob(&self, states: &[Vec<f64>], actions: &[usize]) -> Result<f64> {
        let caches = self.rollout(states, actions)?;
        Ok(caches.iter().zip(actions).map(|(c, &a)| c.probs[a].ln()).sum())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Inverse-CDF draw; zero-probability entries are never chosen.
fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

/// Distributions for a state sequence given the actions taken; see
/// [`Policy::distributions`].
pub fn policy_forward(policy: &Policy, states: &[Vec<f64>], actions: &[usize]) -> Result<Vec<Vec<f64>>> {
    policy.distributions(states, actions)
}
