//! Selective reinitialization of low-utility hidden units.
//!
//! Every hidden unit carries a contribution utility, an exponential moving
//! average of `|h| * sum_j |w_out_j|`, and an age counting training steps
//! since its last reset. Each hidden layer owns a fractional counter that
//! grows by `rho * (number of mature units)` per step; whenever it reaches 1
//! the mature unit with the lowest utility is replaced. The replaced unit
//! gets fresh Kaiming-uniform incoming weights, a zero bias and zero outgoing
//! weights, so the network output is unchanged at the moment of the reset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mlp::{ForwardTrace, Network, NetworkShape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SereConfig {
    /// Utility decay rate `eta` in `[0, 1]`.
    pub decay: f64,
    /// Maturity threshold `m`: units are eligible once `age > m`.
    pub maturity: u64,
    /// Replace at most one unit per layer per step, as in the literal
    /// pseudocode, instead of draining the counter below 1.
    pub single_reset_per_step: bool,
}

impl Default for SereConfig {
    fn default() -> Self {
        Self {
            decay: 0.9,
            maturity: 100,
            single_reset_per_step: false,
        }
    }
}

impl SereConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::InvalidParameter(format!(
                "utility decay must lie in [0, 1], got {}",
                self.decay
            )));
        }
        Ok(())
    }
}

/// One unit replacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResetEvent {
    /// Hidden layer index, 0 for the first hidden layer.
    pub layer: usize,
    pub unit: usize,
    /// Number of SeRe steps taken by this state, including the current one.
    pub step: u64,
    /// Utility of the unit right before it was replaced.
    pub utility: f64,
}

/// Utility, age and counter bookkeeping for one network.
#[derive(Debug, Clone)]
pub struct UtilityState {
    config: SereConfig,
    utilities: Vec<Vec<f64>>,
    ages: Vec<Vec<u64>>,
    counters: Vec<f64>,
    steps: u64,
    rng: ChaCha8Rng,
}

impl UtilityState {
    /// Fresh state for a network of `shape`; `seed` drives the reinitialization draws.
    pub fn new(shape: &NetworkShape, config: SereConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let hidden = shape.hidden_widths();
        Ok(Self {
            config,
            utilities: hidden.iter().map(|&n| vec![0.0; n]).collect(),
            ages: hidden.iter().map(|&n| vec![0; n]).collect(),
            counters: vec![0.0; hidden.len()],
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &SereConfig {
        &self.config
    }

    pub fn utilities(&self) -> &[Vec<f64>] {
        &self.utilities
    }

    pub fn ages(&self) -> &[Vec<u64>] {
        &self.ages
    }

    pub fn counters(&self) -> &[f64] {
        &self.counters
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Number of units in hidden layer `layer` whose age exceeds the maturity threshold.
    pub fn mature_count(&self, layer: usize) -> usize {
        let m = self.config.maturity;
        self.ages[layer].iter().filter(|&&a| a > m).count()
    }

    fn check_network(&self, net: &Network) -> Result<()> {
        let hidden = net.shape().hidden_widths();
        check_dim(self.utilities.len(), hidden.len())?;
        for (u, &n) in self.utilities.iter().zip(hidden) {
            check_dim(u.len(), n)?;
        }
        Ok(())
    }

    /// Decayed utility update for every hidden unit, then ages advance by one.
    ///
    /// `trace` holds the activations of the training forward pass; outgoing
    /// weights are read from `net` as it is now.
    pub fn update_utilities(&mut self, net: &Network, trace: &ForwardTrace) -> Result<()> {
        self.check_network(net)?;
        check_dim(self.utilities.len(), trace.activations.len())?;
        let eta = self.config.decay;
        let layers = net.layers();
        for (l, (utils, h)) in self.utilities.iter_mut().zip(&trace.activations).enumerate() {
            check_dim(utils.len(), h.len())?;
            let outgoing = &layers[l + 1];
            for (i, u) in utils.iter_mut().enumerate() {
                let contribution = h[i].abs() * outgoing.outgoing_abs_sum(i);
                *u = eta * *u + (1.0 - eta) * contribution;
            }
        }
        for age in self.ages.iter_mut().flatten() {
            *age += 1;
        }
        Ok(())
    }

    /// Grows each layer counter by `rho * s_m` and replaces the lowest-utility
    /// mature units while the counter is at least 1.
    pub fn accumulate_and_reset(&mut self, net: &mut Network, rho: f64) -> Result<Vec<ResetEvent>> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!("replacement rate {rho}")));
        }
        self.check_network(net)?;
        self.steps += 1;
        let m = self.config.maturity;
        let mut events = Vec::new();
        for l in 0..self.utilities.len() {
            let mature = self.mature_count(l);
            self.counters[l] += rho * mature as f64;
            while self.counters[l] >= 1.0 {
                let victim = self.ages[l]
                    .iter()
                    .zip(&self.utilities[l])
                    .enumerate()
                    .filter(|(_, (&age, _))| age > m)
                    // strict comparison keeps the lowest index on ties
                    .fold(None::<(usize, f64)>, |best, (i, (_, &u))| match best {
                        Some((_, bu)) if bu <= u => best,
                        _ => Some((i, u)),
                    });
                let Some((unit, utility)) = victim else {
                    break;
                };
                let layers = net.layers_mut();
                layers[l].redraw_incoming(unit, &mut self.rng);
                layers[l + 1].zero_outgoing(unit);
                self.utilities[l][unit] = 0.0;
                self.ages[l][unit] = 0;
                self.counters[l] -= 1.0;
                events.push(ResetEvent {
                    layer: l,
                    unit,
                    step: self.steps,
                    utility,
                });
                if self.config.single_reset_per_step {
                    break;
                }
            }
        }
        // a redraw in layer l + 1 may have refilled weights leaving a victim of layer l
        let layers = net.layers_mut();
        for e in &events {
            layers[e.layer + 1].zero_outgoing(e.unit);
        }
        Ok(events)
    }

    /// One full SeRe step: utility update followed by counter accumulation and resets.
    pub fn step(&mut self, net: &mut Network, trace: &ForwardTrace, rho: f64) -> Result<Vec<ResetEvent>> {
        self.update_utilities(net, trace)?;
        self.accumulate_and_reset(net, rho)
    }

    #[cfg(test)]
    pub(crate) fn set_utilities(&mut self, layer: usize, values: &[f64]) {
        self.utilities[layer].copy_from_slice(values);
    }

    #[cfg(test)]
    pub(crate) fn set_ages(&mut self, layer: usize, value: u64) {
        self.ages[layer].iter_mut().for_each(|a| *a = value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::kaiming_bound;

    fn small_net(hidden: usize) -> Network {
        Network::kaiming(NetworkShape::with_hidden(3, &[hidden]).unwrap(), 1)
    }

    #[test]
    fn full_decay_keeps_utilities() {
        let net = small_net(4);
        let cfg = SereConfig { decay: 1.0, ..Default::default() };
        let mut st = UtilityState::new(net.shape(), cfg, 0).unwrap();
        st.set_utilities(0, &[0.1, 0.2, 0.3, 0.4]);
        let trace = net.forward(&[1.0, 1.0, 1.0]).unwrap();
        st.update_utilities(&net, &trace).unwrap();
        assert_eq!(st.utilities()[0], vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(st.ages()[0], vec![1; 4]);
    }

    #[test]
    fn hand_evaluated_utility_update() {
        // one hidden unit feeding a 2-unit layer with weights {0.2, -0.3}
        let shape = NetworkShape::new(vec![1, 1, 2, 1]).unwrap();
        let net = Network::from_layers(
            shape,
            vec![
                (vec![1.0], vec![0.0]),
                (vec![0.2, -0.3], vec![0.0, 0.0]),
                (vec![1.0, 1.0], vec![0.0]),
            ],
        )
        .unwrap();
        let cfg = SereConfig { decay: 0.9, ..Default::default() };
        let mut st = UtilityState::new(net.shape(), cfg, 0).unwrap();
        st.set_utilities(0, &[0.5]);
        let trace = net.forward(&[1.0]).unwrap();
        assert_eq!(trace.activations[0], vec![1.0]);
        st.update_utilities(&net, &trace).unwrap();
        assert!((st.utilities()[0][0] - 0.50).abs() < 1e-12);
    }

    #[test]
    fn dead_unit_decays() {
        let net = small_net(3);
        let mut st = UtilityState::new(net.shape(), SereConfig::default(), 0).unwrap();
        st.set_utilities(0, &[0.4, 0.4, 0.4]);
        let trace = ForwardTrace {
            activations: vec![vec![0.0, 0.0, 0.0]],
            prediction: 0.0,
        };
        st.update_utilities(&net, &trace).unwrap();
        for u in &st.utilities()[0] {
            assert!((u - 0.9 * 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn young_units_are_never_reset() {
        let mut net = small_net(10);
        let before = net.clone();
        let mut st = UtilityState::new(net.shape(), SereConfig::default(), 0).unwrap();
        for _ in 0..50 {
            let ev = st.accumulate_and_reset(&mut net, 1.0).unwrap();
            assert!(ev.is_empty());
        }
        assert_eq!(st.counters()[0], 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn one_reset_per_step_at_rate_one_tenth() {
        let mut net = small_net(10);
        let cfg = SereConfig { maturity: 0, ..Default::default() };
        let mut st = UtilityState::new(net.shape(), cfg, 0).unwrap();
        for _ in 0..5 {
            // keep all ten units mature so that s_m stays 10
            st.set_ages(0, 1000);
            let ev = st.accumulate_and_reset(&mut net, 0.1).unwrap();
            assert_eq!(ev.len(), 1);
        }
    }

    #[test]
    fn victims_in_adjacent_layers_keep_zero_outgoing() {
        let mut net = Network::kaiming(NetworkShape::with_hidden(3, &[4, 4]).unwrap(), 2);
        let cfg = SereConfig { maturity: 0, ..Default::default() };
        let mut st = UtilityState::new(net.shape(), cfg, 0).unwrap();
        st.set_ages(0, 10);
        st.set_ages(1, 10);
        let ev = st.accumulate_and_reset(&mut net, 0.25).unwrap();
        assert_eq!(ev.iter().map(|e| e.layer).collect::<Vec<_>>(), vec![0, 1]);
        for e in &ev {
            let next = &net.layers()[e.layer + 1];
            assert!((0..next.outputs()).all(|j| next.weight(e.unit, j) == 0.0));
        }
    }

    #[test]
    fn lowest_utility_unit_is_replaced() {
        let mut net = small_net(3);
        let cfg = SereConfig { maturity: 5, ..Default::default() };
        let mut st = UtilityState::new(net.shape(), cfg, 0).unwrap();
        st.set_utilities(0, &[0.3, 0.1, 0.2]);
        st.set_ages(0, 10);
        let ev = st.accumulate_and_reset(&mut net, 1.0 / 3.0 + 1e-12).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].unit, 1);
        assert_eq!(ev[0].utility, 0.1);
        assert_eq!(net.layers()[1].weight(1, 0), 0.0);
        assert_eq!(net.layers()[0].bias()[1], 0.0);
        let bound = kaiming_bound(3);
        assert!(net.layers()[0].incoming(1).iter().all(|w| w.abs() <= bound));
        assert_eq!(st.utilities()[0][1], 0.0);
        assert_eq!(st.ages()[0][1], 0);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let mut net = small_net(4);
        let cfg = SereConfig { maturity: 0, ..Default::default() };
        let mut st = UtilityState::new(net.shape(), cfg, 0).unwrap();
        st.set_utilities(0, &[0.5, 0.2, 0.2, 0.2]);
        st.set_ages(0, 3);
        let ev = st.accumulate_and_reset(&mut net, 0.25).unwrap();
        assert_eq!(ev[0].unit, 1);
    }

    #[test]
    fn counter_drains_or_single_reset() {
        let mut net = small_net(10);
        let cfg = SereConfig { maturity: 0, ..Default::default() };
        let mut st = UtilityState::new(net.shape(), cfg, 0).unwrap();
        st.set_ages(0, 3);
        let ev = st.accumulate_and_reset(&mut net, 0.25).unwrap();
        assert_eq!(ev.len(), 2);
        assert!(st.counters()[0] < 1.0);

        let cfg = SereConfig { maturity: 0, single_reset_per_step: true, ..Default::default() };
        let mut st = UtilityState::new(net.shape(), cfg, 0).unwrap();
        st.set_ages(0, 3);
        let ev = st.accumulate_and_reset(&mut net, 0.25).unwrap();
        assert_eq!(ev.len(), 1);
        assert!((st.counters()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_rate_matches_utility_update_alone() {
        let mut a = small_net(6);
        let b = a.clone();
        let cfg = SereConfig { maturity: 0, ..Default::default() };
        let mut sa = UtilityState::new(a.shape(), cfg, 0).unwrap();
        let mut sb = UtilityState::new(b.shape(), cfg, 0).unwrap();
        let trace = a.forward(&[0.1, 0.2, 0.3]).unwrap();
        for _ in 0..20 {
            assert!(sa.step(&mut a, &trace, 0.0).unwrap().is_empty());
            sb.update_utilities(&b, &trace).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa.utilities(), sb.utilities());
        assert_eq!(sa.ages(), sb.ages());
    }

    #[test]
    fn reset_unit_waits_for_maturity_again() {
        let mut net = small_net(2);
        let cfg = SereConfig { maturity: 3, ..Default::default() };
        let mut st = UtilityState::new(net.shape(), cfg, 0).unwrap();
        st.set_ages(0, 100);
        st.set_utilities(0, &[0.0, 1.0]);
        let trace = net.forward(&[0.0, 0.0, 0.0]).unwrap();
        let ev = st.accumulate_and_reset(&mut net, 0.5).unwrap();
        assert_eq!(ev[0].unit, 0);
        // unit 0 is young for the next m steps, so only unit 1 can go
        for _ in 0..3 {
            let ev = st.step(&mut net, &trace, 1.0).unwrap();
            assert!(ev.iter().all(|e| e.unit != 0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut net = small_net(3);
        let mut st = UtilityState::new(net.shape(), SereConfig::default(), 0).unwrap();
        assert!(st.accumulate_and_reset(&mut net, 1.5).is_err());
        let mut other = small_net(4);
        assert!(st.accumulate_and_reset(&mut other, 0.1).is_err());
        let cfg = SereConfig { decay: 1.2, ..Default::default() };
        assert!(UtilityState::new(net.shape(), cfg, 0).is_err());
    }
}
