//! Actor-critic controller: a stacked LSTM reads the embedded previous
//! architecture, one softmax head per component slot samples the next one
//! autoregressively, and a linear critic estimates the return.

use log::warn;
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Result};
use crate::search_space::{applicable, random_genotype, Choices, Genotype, Slot, StateEmbedding, SLOT_COUNT};
use crate::tensor::{Adam, AdamState, Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub units: usize,
    pub layers: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Probability of starting an episode from the best architecture so far.
    pub exploit_prob: f64,
    /// Mean chosen-component probability that ends the search.
    pub termination_prob: f64,
    pub episodes: usize,
    pub steps: usize,
    /// Half-width of the uniform initializer of the actor and critic heads.
    pub head_init: f64,
    pub seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            units: 500,
            layers: 2,
            embed_dim: 100,
            learning_rate: 7e-4,
            gamma: 0.99,
            exploit_prob: 0.7,
            termination_prob: 0.9,
            episodes: 1000,
            steps: 10,
            head_init: 0.01,
            seed: 0,
        }
    }
}

impl ControllerConfig {
    pub fn check(&self) -> Result<()> {
        if self.units == 0 || self.layers == 0 || self.embed_dim == 0 || self.episodes == 0 || self.steps == 0 {
            return Err(config_err!("controller units, layers, embed_dim, episodes and steps must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config_err!("controller learning_rate must be positive"));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("exploit_prob", self.exploit_prob),
            ("termination_prob", self.termination_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err!("controller {name} = {v} is outside [0, 1]"));
            }
        }
        if !(self.head_init >= 0.0) {
            return Err(config_err!("controller head_init must be nonnegative"));
        }
        Ok(())
    }
}

/// `Q_t = sum_{t' >= t} gamma^(t'-t) R_t'`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        q[t] = acc;
    }
    q
}

/// Recurrent memory: final hidden and cell state of every layer, each `(1, H)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memory {
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

impl Memory {
    pub fn zeros(layers: usize, units: usize) -> Memory {
        Memory {
            h: vec![Tensor::zeros(&[1, units]); layers],
            c: vec![Tensor::zeros(&[1, units]); layers],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().chain(&self.c).all(|t| t.data().iter().all(|v| *v == 0.0))
    }
}

/// One sampled head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSample {
    pub row: usize,
    pub choice: usize,
    pub probs: Vec<f64>,
}

/// Controller state after sampling one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Embedded architecture fed to the recurrent network.
    pub s_prev: Tensor,
    /// Memory after reading `s_prev`.
    pub memory: Memory,
    /// Top-layer hidden representation.
    pub hidden: Vec<f64>,
    pub heads: Vec<HeadSample>,
    pub log_prob: f64,
    pub value: f64,
}

impl ControllerState {
    pub fn chosen_probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.heads.iter().map(|h| h.probs[h.choice])
    }

    pub fn head_probs(&self) -> Vec<Vec<f64>> {
        self.heads.iter().map(|h| h.probs.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub genotype: Genotype,
    pub heads: Vec<HeadSample>,
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
    pub reward: f64,
}

impl StepRecord {
    pub fn mean_chosen_prob(&self) -> f64 {
        let n = self.heads.len().max(1) as f64;
        self.heads.iter().map(|h| h.probs[h.choice]).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: usize,
    /// Whether the episode started from the best architecture so far.
    pub exploited: bool,
    pub start: Genotype,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Mean over models and heads of the chosen-component probability.
    pub fn mean_chosen_prob(&self) -> f64 {
        let (sum, n) = self
            .steps
            .iter()
            .flat_map(|s| s.heads.iter())
            .fold((0.0, 0usize), |(s, n), h| (s + h.probs[h.choice], n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn mean_reward(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.reward).sum::<f64>() / self.steps.len() as f64
    }
}

/// Scores a batch of sampled architectures. Implementations may evaluate
/// the batch in parallel; rewards are returned in input order.
pub trait Environment {
    fn evaluate(&mut self, episode: usize, steps: &[ControllerState], genotypes: &[Genotype]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LstmParams {
    wx: usize,
    wh: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub config: ControllerConfig,
    pub embedding: StateEmbedding,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    lstm: Vec<LstmParams>,
    /// `(weight, bias)` per slot row.
    heads: Vec<(usize, usize)>,
    critic: (usize, usize),
    pub optimizer: AdamState,
}

/// Which component each head takes as its "previous choice" input.
fn prev_embedding<'a>(emb: &'a StateEmbedding, choices: &Choices, row: usize) -> &'a [f64] {
    match (0..row).rev().find(|&r| choices[r].is_some()) {
        Some(r) => emb.value_row(Slot::from_row(r).component(), choices[r].unwrap()),
        None => emb.none_row(row),
    }
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Controller> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embedding = StateEmbedding::new(config.embed_dim, &mut rng);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut add = |name: String, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng| {
            let n: usize = shape.iter().product();
            let data = if bound > 0.0 {
                let u = Uniform::new_inclusive(-bound, bound);
                (0..n).map(|_| u.sample(rng)).collect()
            } else {
                vec![0.0; n]
            };
            names.push(name);
            params.push(Tensor::new(shape.to_vec(), data).expect("shape"));
            params.len() - 1
        };
        let h = config.units;
        let k = 1.0 / (h as f64).sqrt();
        let mut lstm = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { config.embed_dim } else { h };
            lstm.push(LstmParams {
                wx: add(format!("lstm{l}.wx"), &[input, 4 * h], k, &mut rng),
                wh: add(format!("lstm{l}.wh"), &[h, 4 * h], k, &mut rng),
                b: add(format!("lstm{l}.b"), &[4 * h], k, &mut rng),
            });
        }
        let head_in = h + config.embed_dim;
        let mut heads = Vec::with_capacity(SLOT_COUNT);
        for row in 0..SLOT_COUNT {
            let slot = Slot::from_row(row);
            let card = slot.cardinality();
            let label = slot.label();
            heads.push((
                add(format!("head.{label}.w"), &[head_in, card], config.head_init, &mut rng),
                add(format!("head.{label}.b"), &[card], config.head_init, &mut rng),
            ));
        }
        let critic = (
            add("critic.w".into(), &[h, 1], config.head_init, &mut rng),
            add("critic.b".into(), &[1], 0.0, &mut rng),
        );
        let optimizer = AdamState::new(&params);
        Ok(Controller {
            config,
            embedding,
            names,
            params,
            lstm,
            heads,
            critic,
            optimizer,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Shapes of the recurrent weights, `(wx, wh)` per layer.
    pub fn lstm_shapes(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        self.lstm
            .iter()
            .map(|l| (self.params[l.wx].shape().to_vec(), self.params[l.wh].shape().to_vec()))
            .collect()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        self.params.get_mut(i)
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    pub fn initial_memory(&self) -> Memory {
        Memory::zeros(self.config.layers, self.config.units)
    }

    /// Read one embedded architecture; returns the top hidden state and the
    /// per-layer `(h, c)` nodes to carry forward.
    fn read(&self, g: &mut Graph, p: &[Var], state: Var, mem: &[(Var, Var)]) -> Result<(Var, Vec<(Var, Var)>)> {
        let seq = g.shape(state)[0];
        let mut input = state;
        let mut next = Vec::with_capacity(self.lstm.len());
        for (l, lp) in self.lstm.iter().enumerate() {
            let out = g.lstm(input, mem[l].0, mem[l].1, p[lp.wx], p[lp.wh], p[lp.b])?;
            input = g.slice(out, 0, 0, seq)?;
            let h = g.slice(out, 0, seq - 1, 1)?;
            let c = g.slice(out, 0, seq, 1)?;
            next.push((h, c));
        }
        Ok((next.last().unwrap().0, next))
    }

    /// Log-probabilities of one head given the top hidden state.
    fn head(&self, g: &mut Graph, p: &[Var], h: Var, choices: &Choices, row: usize) -> Result<Var> {
        let e = prev_embedding(&self.embedding, choices, row).to_vec();
        let e = g.constant(Tensor::new(vec![1, self.config.embed_dim], e)?);
        let z = g.concat(&[h, e], 1)?;
        let (w, b) = self.heads[row];
        let logits = g.linear(z, p[w], Some(p[b]))?;
        g.log_softmax(logits)
    }

    fn value(&self, g: &mut Graph, p: &[Var], h: Var) -> Result<Var> {
        let v = g.linear(h, p[self.critic.0], Some(p[self.critic.1]))?;
        g.reshape(v, &[1])
    }

    fn bind_memory(g: &mut Graph, mem: &Memory) -> Vec<(Var, Var)> {
        mem.h.iter().zip(&mem.c).map(|(h, c)| (g.constant(h.clone()), g.constant(c.clone()))).collect()
    }

    /// Sample one architecture from the embedded state `s_prev`, continuing
    /// from `memory`.
    pub fn sample_architecture<R: Rng + ?Sized>(&self, s_prev: &Tensor, memory: &Memory, rng: &mut R) -> Result<(Genotype, ControllerState)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(s_prev.clone());
        let mem = Self::bind_memory(&mut g, memory);
        let (h, next) = self.read(&mut g, &p, x, &mem)?;
        let mut choices: Choices = [None; SLOT_COUNT];
        let mut heads = Vec::new();
        let mut log_prob = 0.0;
        for row in 0..SLOT_COUNT {
            if !applicable(&choices, row) {
                continue;
            }
            let lp = self.head(&mut g, &p, h, &choices, row)?;
            let probs: Vec<f64> = g.value(lp).data().iter().map(|v| v.exp()).collect();
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut choice = probs.len() - 1;
            for (i, q) in probs.iter().enumerate() {
                acc += q;
                if u < acc {
                    choice = i;
                    break;
                }
            }
            log_prob += g.value(lp).data()[choice];
            choices[row] = Some(choice);
            heads.push(HeadSample { row, choice, probs });
        }
        let genotype = Genotype::from_choices(&choices)?;
        let v = self.value(&mut g, &p, h)?;
        let state = ControllerState {
            s_prev: s_prev.clone(),
            memory: Memory {
                h: next.iter().map(|(h, _)| g.value(*h).clone()).collect(),
                c: next.iter().map(|(_, c)| g.value(*c).clone()).collect(),
            },
            hidden: g.value(h).data().to_vec(),
            heads,
            log_prob,
            value: g.scalar_value(v),
        };
        Ok((genotype, state))
    }

    /// Per-episode random stream derived from the controller seed.
    pub fn episode_rng(&self, episode: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(episode as u64 + 1);
        rng
    }

    /// Starting architecture of an episode: the best so far with probability
    /// `exploit_prob`, else a uniformly random one.
    pub fn episode_start<R: Rng + ?Sized>(&self, best: Option<&Genotype>, rng: &mut R) -> (Genotype, bool) {
        let draw: f64 = rng.gen();
        match best {
            Some(b) if draw < self.config.exploit_prob => (b.clone(), true),
            _ => (random_genotype(rng), false),
        }
    }

    /// Sample `steps` architectures from zeroed memory, score them with `env`
    /// and record the trajectory.
    pub fn run_episode<E: Environment + ?Sized, R: Rng + ?Sized>(
        &self,
        env: &mut E,
        episode: usize,
        best: Option<&Genotype>,
        rng: &mut R,
    ) -> Result<Trajectory> {
        let (start, exploited) = self.episode_start(best, rng);
        let mut s = self.embedding.encode(&start)?;
        let mut memory = self.initial_memory();
        let mut states = Vec::with_capacity(self.config.steps);
        let mut genotypes = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let (geno, st) = self.sample_architecture(&s, &memory, rng)?;
            s = self.embedding.encode(&geno)?;
            memory = st.memory.clone();
            genotypes.push(geno);
            states.push(st);
        }
        let rewards = env.evaluate(episode, &states, &genotypes)?;
        if rewards.len() != states.len() {
            return Err(usage_err!("environment returned {} rewards for {} models", rewards.len(), states.len()));
        }
        let steps = states
            .into_iter()
            .zip(genotypes)
            .zip(rewards)
            .map(|((st, genotype), reward)| StepRecord {
                entropy: st.heads.iter().map(|h| h.probs.iter().filter(|&&q| q > 0.0).map(|q| -q * q.ln()).sum::<f64>()).sum(),
                genotype,
                log_prob: st.log_prob,
                value: st.value,
                heads: st.heads,
                reward,
            })
            .collect();
        Ok(Trajectory {
            episode,
            exploited,
            start,
            steps,
        })
    }

    /// Replay a trajectory on the graph: summed log-probability of the
    /// recorded choices and critic value per step.
    pub fn replay(&self, g: &mut Graph, p: &[Var], traj: &Trajectory) -> Result<Vec<(Var, Var)>> {
        let zero = self.initial_memory();
        let mut mem = Self::bind_memory(g, &zero);
        let mut state = self.embedding.encode(&traj.start)?;
        let mut out = Vec::with_capacity(traj.steps.len());
        for step in &traj.steps {
            let x = g.constant(state);
            let (h, next) = self.read(g, p, x, &mem)?;
            mem = next;
            let mut choices: Choices = [None; SLOT_COUNT];
            let mut total: Option<Var> = None;
            for hs in &step.heads {
                let lp = self.head(g, p, h, &choices, hs.row)?;
                let picked = g.pick(lp, hs.choice)?;
                total = Some(match total {
                    Some(t) => g.add(t, picked)?,
                    None => picked,
                });
                choices[hs.row] = Some(hs.choice);
            }
            let total = total.ok_or_else(|| usage_err!("trajectory step without sampled heads"))?;
            let v = self.value(g, p, h)?;
            out.push((total, v));
            state = self.embedding.encode_choices(&choices);
        }
        Ok(out)
    }

    /// Actor and critic losses for a trajectory against the given returns.
    /// Advantages enter the actor loss as constants.
    pub fn losses(&self, g: &mut Graph, p: &[Var], traj: &Trajectory, returns: &[f64]) -> Result<(Var, Var)> {
        if returns.len() != traj.steps.len() {
            return Err(usage_err!("{} returns for {} steps", returns.len(), traj.steps.len()));
        }
        let steps = self.replay(g, p, traj)?;
        let mut actor: Option<Var> = None;
        let mut critic: Option<Var> = None;
        for ((logp, v), q) in steps.into_iter().zip(returns) {
            let advantage = q - g.scalar_value(v);
            let a = g.scale(logp, -advantage);
            let d = g.add_scalar(v, -q);
            let c = g.square(d);
            actor = Some(match actor {
                Some(t) => g.add(t, a)?,
                None => a,
            });
            critic = Some(match critic {
                Some(t) => g.add(t, c)?,
                None => c,
            });
        }
        let actor = actor.ok_or_else(|| usage_err!("empty trajectory"))?;
        Ok((actor, critic.unwrap()))
    }

    /// One optimizer step on the combined actor and critic loss.
    pub fn update(&mut self, traj: &Trajectory) -> Result<UpdateStats> {
        let returns = discounted_returns(&traj.rewards(), self.config.gamma);
        let mut g = Graph::new();
        let p = self.bind(&mut g, true);
        let (actor, critic) = self.losses(&mut g, &p, traj, &returns)?;
        let (a, c) = (g.scalar_value(actor), g.scalar_value(critic));
        if !a.is_finite() || !c.is_finite() {
            warn!("episode {}: non-finite controller loss (actor {a}, critic {c}); update skipped", traj.episode);
            return Ok(UpdateStats {
                actor_loss: a,
                critic_loss: c,
                skipped: true,
            });
        }
        let loss = g.add(actor, critic)?;
        g.backward(loss)?;
        let grads: Vec<Option<&[f64]>> = p.iter().map(|v| g.grad_slice(*v)).collect();
        if grads.iter().flatten().any(|s| s.iter().any(|x| !x.is_finite())) {
            warn!("episode {}: non-finite controller gradient; update skipped", traj.episode);
            return Ok(UpdateStats {
                actor_loss: a,
                critic_loss: c,
                skipped: true,
            });
        }
        Adam::new(self.config.learning_rate).step(&mut self.params, &grads, &mut self.optimizer)?;
        Ok(UpdateStats {
            actor_loss: a,
            critic_loss: c,
            skipped: false,
        })
    }

    /// Termination rule after `episodes_done` episodes, the last of which
    /// had mean chosen-component probability `last_mean_prob`.
    pub fn should_terminate(&self, episodes_done: usize, last_mean_prob: f64) -> bool {
        episodes_done >= self.config.episodes || last_mean_prob >= self.config.termination_prob
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{validate, BlockKind, LayerSlot};

    fn small(seed: u64) -> ControllerConfig {
        ControllerConfig {
            units: 16,
            embed_dim: 8,
            steps: 4,
            seed,
            ..ControllerConfig::default()
        }
    }

    struct Bandit;

    impl Environment for Bandit {
        fn evaluate(&mut self, _: usize, _: &[ControllerState], genotypes: &[Genotype]) -> Result<Vec<f64>> {
            Ok(genotypes
                .iter()
                .map(|g| if g.layers.iter().any(|l| l.block == BlockKind::Patching) { 1.0 } else { 0.0 })
                .collect())
        }
    }

    #[test]
    fn returns() {
        let q = discounted_returns(&[1.0, 1.0, 1.0], 0.99);
        assert!((q[0] - 2.9701).abs() < 1e-12);
        assert_eq!(discounted_returns(&[3.0, -1.0, 2.0], 0.0), vec![3.0, -1.0, 2.0]);
        assert_eq!(discounted_returns(&[0.0; 5], 0.99), vec![0.0; 5]);
        // independent oracle: explicit double sum
        let r = [0.3, -1.2, 2.0, 0.0, 5.5];
        let q = discounted_returns(&r, 0.9);
        for t in 0..r.len() {
            let want: f64 = (t..r.len()).map(|k| 0.9f64.powi((k - t) as i32) * r[k]).sum();
            assert!((q[t] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn default_structure() {
        let c = Controller::new(ControllerConfig::default()).unwrap();
        let shapes = c.lstm_shapes();
        assert_eq!(shapes.len(), 2);
        assert_eq!(shapes[0], (vec![100, 2000], vec![500, 2000]));
        assert_eq!(shapes[1], (vec![500, 2000], vec![500, 2000]));
        assert_eq!(c.heads.len(), SLOT_COUNT);
    }

    #[test]
    fn samples_are_valid_and_normalized() {
        let c = Controller::new(small(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mem = c.initial_memory();
        let mut s = c.embedding.encode(&random_genotype(&mut rng)).unwrap();
        for _ in 0..50 {
            let (g, st) = c.sample_architecture(&s, &mem, &mut rng).unwrap();
            assert!(validate(&g).is_empty());
            for h in &st.heads {
                assert!((h.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(h.probs.iter().all(|p| *p >= 0.0));
                assert!(applicable(&g.to_choices().unwrap(), h.row));
            }
            assert!(st.log_prob.is_finite());
            s = c.embedding.encode(&g).unwrap();
            mem = st.memory;
        }
    }

    #[test]
    fn forced_head_saturates() {
        let mut c = Controller::new(small(1)).unwrap();
        let row = Slot::Layer { index: 0, slot: LayerSlot::Block }.row();
        let b = c.param_mut("head.layer1.block.b").unwrap();
        b.data_mut().fill(0.0);
        b.data_mut()[2] = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = c.embedding.encode(&random_genotype(&mut rng)).unwrap();
        let (g, st) = c.sample_architecture(&s, &c.initial_memory(), &mut rng).unwrap();
        let head = st.heads.iter().find(|h| h.row == row).unwrap();
        assert!(head.probs[2] >= 1.0 - 1e-6);
        assert_eq!(g.layers[0].block, BlockKind::ALL[2]);
    }

    #[test]
    fn untrained_heads_are_near_uniform() {
        let c = Controller::new(small(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = c.embedding.encode(&random_genotype(&mut rng)).unwrap();
        let mem = c.initial_memory();
        let rows = [0, 1, Slot::Layer { index: 0, slot: LayerSlot::Block }.row()];
        let mut counts: Vec<Vec<usize>> = rows.iter().map(|r| vec![0; Slot::from_row(*r).cardinality()]).collect();
        for _ in 0..1000 {
            let (g, _) = c.sample_architecture(&s, &mem, &mut rng).unwrap();
            let ch = g.to_choices().unwrap();
            for (k, r) in rows.iter().enumerate() {
                counts[k][ch[*r].unwrap()] += 1;
            }
        }
        for cnt in counts {
            let n = cnt.len() as f64;
            let tv: f64 = cnt.iter().map(|&x| (x as f64 / 1000.0 - 1.0 / n).abs()).sum::<f64>() / 2.0;
            assert!(tv < 0.1, "{cnt:?}");
        }
    }

    #[test]
    fn episodes_reset_memory_and_branch() {
        let c = Controller::new(small(6)).unwrap();
        let best = random_genotype(&mut ChaCha8Rng::seed_from_u64(0));
        let mut exploit = 0;
        for e in 0..200 {
            let mut rng = c.episode_rng(e);
            let probe: f64 = rng.clone().gen();
            let t = c.run_episode(&mut Bandit, e, Some(&best), &mut rng).unwrap();
            assert_eq!(t.steps.len(), 4);
            assert_eq!(t.exploited, probe < 0.7);
            if t.exploited {
                exploit += 1;
                assert_eq!(t.start, best);
            }
        }
        assert!((100..180).contains(&exploit));
        // without a best architecture every episode starts at random
        let t = c.run_episode(&mut Bandit, 0, None, &mut c.episode_rng(0)).unwrap();
        assert!(!t.exploited);
        assert!(c.initial_memory().is_zero());
    }

    #[test]
    fn replay_matches_sampling() {
        let c = Controller::new(small(7)).unwrap();
        let t = c.run_episode(&mut Bandit, 0, None, &mut c.episode_rng(0)).unwrap();
        let mut g = Graph::new();
        let p = c.bind(&mut g, true);
        let r = c.replay(&mut g, &p, &t).unwrap();
        for ((lp, v), s) in r.iter().zip(&t.steps) {
            assert!((g.scalar_value(*lp) - s.log_prob).abs() < 1e-9);
            assert!((g.scalar_value(*v) - s.value).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_advantage_gives_zero_actor_gradient() {
        let c = Controller::new(small(8)).unwrap();
        let t = c.run_episode(&mut Bandit, 0, None, &mut c.episode_rng(0)).unwrap();
        let values: Vec<f64> = t.steps.iter().map(|s| s.value).collect();
        let mut g = Graph::new();
        let p = c.bind(&mut g, true);
        let (actor, _) = c.losses(&mut g, &p, &t, &values).unwrap();
        g.backward(actor).unwrap();
        for v in &p {
            if let Some(gr) = g.grad_slice(*v) {
                assert!(gr.iter().all(|x| *x == 0.0));
            }
        }
    }

    #[test]
    fn positive_advantage_raises_chosen_probabilities() {
        let mut c = Controller::new(ControllerConfig {
            learning_rate: 1e-4,
            steps: 1,
            ..small(9)
        })
        .unwrap();
        let mut t = c.run_episode(&mut Bandit, 0, None, &mut c.episode_rng(0)).unwrap();
        t.steps[0].reward = t.steps[0].value + 1.0;
        let before = t.steps[0].log_prob;
        c.update(&t).unwrap();
        let mut g = Graph::new();
        let p = c.bind(&mut g, false);
        let lp = c.replay(&mut g, &p, &t).unwrap()[0].0;
        let after = g.scalar_value(lp);
        assert!(after >= before, "{after} < {before}");
        // each head individually
        let mut g = Graph::new();
        let p = c.bind(&mut g, false);
        let mut choices: Choices = [None; SLOT_COUNT];
        let x = g.constant(c.embedding.encode(&t.start).unwrap());
        let zero = c.initial_memory();
        let mem = Controller::bind_memory(&mut g, &zero);
        let (h, _) = c.read(&mut g, &p, x, &mem).unwrap();
        for hs in &t.steps[0].heads {
            let lp = c.head(&mut g, &p, h, &choices, hs.row).unwrap();
            assert!(g.value(lp).data()[hs.choice].exp() >= hs.probs[hs.choice] - 1e-12, "head {}", Slot::from_row(hs.row).label());
            choices[hs.row] = Some(hs.choice);
        }
    }

    #[test]
    fn critic_learns_a_stationary_reward() {
        let mut c = Controller::new(ControllerConfig {
            learning_rate: 3e-3,
            ..small(10)
        })
        .unwrap();
        struct Const;
        impl Environment for Const {
            fn evaluate(&mut self, _: usize, s: &[ControllerState], _: &[Genotype]) -> Result<Vec<f64>> {
                Ok(vec![0.5; s.len()])
            }
        }
        let mut losses = Vec::new();
        for e in 0..50 {
            let t = c.run_episode(&mut Const, e, None, &mut c.episode_rng(e)).unwrap();
            losses.push(c.update(&t).unwrap().critic_loss);
            // bounded rewards bound the returns
            let q = discounted_returns(&t.rewards(), 0.99);
            let bound = 0.5 * (1.0 - 0.99f64.powi(4)) / 0.01;
            assert!(q.iter().all(|v| v.abs() <= bound + 1e-12));
        }
        let head: f64 = losses[..5].iter().sum();
        let tail: f64 = losses[45..].iter().sum();
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn termination_rule() {
        let c = Controller::new(small(11)).unwrap();
        let t = c.run_episode(&mut Bandit, 0, None, &mut c.episode_rng(0)).unwrap();
        assert!(!c.should_terminate(1, t.mean_chosen_prob()));
        assert!(c.should_terminate(1000, 0.1));
        assert!(c.should_terminate(3, 1.0));
    }
}
