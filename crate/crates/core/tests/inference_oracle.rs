//! The recurrent posterior step recomputed by hand from the named tensors.

use rand::Rng;
use trio_core::envs::{EnvSpec, Transition};
use trio_core::inference::{transition_features, InferenceArch, InferenceNetwork, STD_FLOOR};
use trio_core::latent::GaussianBelief;
use trio_core::neural::ParamStore;
use trio_core::rng::SeedStream;

struct Oracle<'a> {
    store: &'a ParamStore<f32>,
}

impl Oracle<'_> {
    fn tensor(&self, name: &str) -> (Vec<usize>, Vec<f64>) {
        let id = self.store.id(name).unwrap_or_else(|| panic!("missing tensor {name}"));
        let t = self.store.get(id);
        (t.shape.clone(), t.data.iter().map(|&v| v as f64).collect())
    }

    /// `W x + b` for the layer called `name`.
    fn affine(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let (shape, w) = self.tensor(&format!("{name}.w"));
        let (_, b) = self.tensor(&format!("{name}.b"));
        assert_eq!(shape[1], x.len());
        (0..shape[0]).map(|i| b[i] + (0..shape[1]).map(|j| w[i * shape[1] + j] * x[j]).sum::<f64>()).collect()
    }

    fn matvec(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let (shape, w) = self.tensor(name);
        (0..shape[0]).map(|i| (0..shape[1]).map(|j| w[i * shape[1] + j] * x[j]).sum()).collect()
    }

    fn gate(&self, g: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
        let wx = self.matvec(&format!("inference.gru.w{g}"), x);
        let uh = self.matvec(&format!("inference.gru.u{g}"), h);
        let (_, b) = self.tensor(&format!("inference.gru.b{g}"));
        (0..wx.len()).map(|i| wx[i] + uh[i] + b[i]).collect()
    }

    fn step(&self, h: &[f64], features: &[f64], prior: &GaussianBelief) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let prior_vec: Vec<f64> = prior.mean().iter().chain(prior.std()).copied().collect();
        let x: Vec<f64> = features.iter().chain(&prior_vec).copied().collect();
        let e: Vec<f64> = self.affine("inference.enc", &x).into_iter().map(f64::tanh).collect();
        let z: Vec<f64> = self.gate("z", &e, h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = self.gate("r", &e, h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = self.gate("h", &e, &rh).into_iter().map(f64::tanh).collect();
        let h2: Vec<f64> = (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect();
        let head: Vec<f64> = h2.iter().chain(&prior_vec).copied().collect();
        let mean: Vec<f64> = self.affine("inference.mean", &head).iter().zip(prior.mean()).map(|(d, m)| m + d).collect();
        let std: Vec<f64> = self
            .affine("inference.std", &head)
            .into_iter()
            .map(|v| (1.0 + v.exp()).ln() + STD_FLOOR)
            .collect();
        (h2, mean, std)
    }
}

fn randomize(net: &mut InferenceNetwork, rng: &mut impl Rng) {
    // Fresh networks have zero biases; perturb every tensor so each term
    // of the step contributes.
    for t in net.params_mut().tensors_mut() {
        for v in t.data.iter_mut() {
            *v += rng.random_range(-0.3f32..0.3);
        }
    }
}

fn random_transition(spec: &EnvSpec, rng: &mut impl Rng) -> Transition {
    let state: Vec<f64> = (0..spec.state_dim).map(|_| rng.random_range(0.0..15.0)).collect();
    let next_state: Vec<f64> = (0..spec.state_dim).map(|_| rng.random_range(0.0..15.0)).collect();
    let action: Vec<f64> = (0..spec.action_dim).map(|k| rng.random_range(spec.action_lo[k]..spec.action_hi[k])).collect();
    Transition { state, action, reward: rng.random_range(-10.0..0.0), next_state, done: false, terminal: false }
}

#[test]
fn frozen_network_matches_hand_computation() {
    let specs = [EnvSpec::minigolf(0), EnvSpec::minigolf(3), EnvSpec::velocity1d(), EnvSpec::goalreacher2d()];
    for (k, spec) in specs.iter().enumerate() {
        let stream = SeedStream::new(40 + k as u64);
        let arch = InferenceArch { hidden: 16, encoder: 12 };
        let mut net = InferenceNetwork::new(spec, arch, &mut stream.child("init").rng()).unwrap();
        let mut rng = stream.child("data").rng();
        randomize(&mut net, &mut rng);
        let d = spec.latent_dim();
        for _ in 0..10 {
            let prior = GaussianBelief::new(
                (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..d).map(|_| rng.random_range(0.05..1.0)).collect(),
            )
            .unwrap();
            let hidden: Vec<f32> = (0..arch.hidden).map(|_| rng.random_range(-0.9f32..0.9)).collect();
            let t = random_transition(spec, &mut rng);
            let (h_net, b_net) = net.posterior_step(&hidden, &t, &prior).unwrap();
            let h64: Vec<f64> = hidden.iter().map(|&v| v as f64).collect();
            let (h_ref, m_ref, s_ref) = Oracle { store: net.params() }.step(&h64, &transition_features(spec, &t), &prior);
            for (a, b) in h_net.iter().zip(&h_ref) {
                assert!((*a as f64 - b).abs() < 1e-6, "hidden {a} vs {b}");
            }
            for (a, b) in b_net.mean().iter().zip(&m_ref) {
                assert!((a - b).abs() < 1e-6, "mean {a} vs {b}");
            }
            for (a, b) in b_net.std().iter().zip(&s_ref) {
                assert!((a - b).abs() < 1e-6, "std {a} vs {b}");
            }
        }
    }
}
