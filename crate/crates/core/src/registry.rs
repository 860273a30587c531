//! Every factory in one place, keyed by the names the run file uses.

use crate::agents::{activation_from_name, agent_factory, AgentFactory};
use crate::config::{Factory, ACTIVATIONS, LOSSES};
use crate::envs::{env_factory, EnvFactory};
use crate::nn::{Activation, Loss};
use crate::srl::{srl_factory, SrlModule};
use crate::trainer::{trainer_factory, TrainerKind};

pub struct Registry {
    pub agents: AgentFactory,
    pub trainers: Factory<TrainerKind, ()>,
    pub environments: EnvFactory,
    pub srl: Factory<SrlModule, ()>,
    pub activations: Factory<Activation, ()>,
    pub losses: Factory<Loss, ()>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    pub fn new() -> Self {
        let mut activations = Factory::new("activation");
        for &name in ACTIVATIONS {
            activations.register(name, move |_, _| activation_from_name(name));
        }
        let mut losses = Factory::new("loss");
        for &name in LOSSES {
            losses.register(name, move |_, _| Loss::from_name(name));
        }
        Self {
            agents: agent_factory(),
            trainers: trainer_factory(),
            environments: env_factory(),
            srl: srl_factory(),
            activations,
            losses,
        }
    }

    /// `(category, sorted keys)` for every factory.
    pub fn listing(&self) -> Vec<(&'static str, Vec<String>)> {
        fn keys<T, C>(f: &Factory<T, C>) -> (&'static str, Vec<String>) {
            let mut k: Vec<String> = f.keys().map(str::to_string).collect();
            k.sort();
            (f.category(), k)
        }
        vec![
            keys(&self.agents),
            keys(&self.trainers),
            keys(&self.environments),
            keys(&self.srl),
            keys(&self.activations),
            keys(&self.losses),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ParamTree, AGENT_TYPES, ENV_TYPES, SRL_TYPES, TRAINER_TYPES};
    use crate::Error;

    fn sorted(xs: &[&str]) -> Vec<String> {
        let mut v: Vec<String> = xs.iter().map(|s| s.to_string()).collect();
        v.sort();
        v
    }

    #[test]
    fn registry_keys_match_config_enums() {
        let r = Registry::new();
        let listing: std::collections::HashMap<_, _> = r.listing().into_iter().collect();
        assert_eq!(listing["agent"], sorted(AGENT_TYPES));
        assert_eq!(listing["trainer"], sorted(TRAINER_TYPES));
        assert_eq!(listing["environment"], sorted(ENV_TYPES));
        assert_eq!(listing["srl"], sorted(SRL_TYPES));
        assert_eq!(listing["activation"], sorted(ACTIVATIONS));
        assert_eq!(listing["loss"], sorted(LOSSES));
    }

    #[test]
    fn unknown_keys_name_the_key() {
        let r = Registry::new();
        let p = ParamTree::new();
        for err in [
            r.trainers.create("async", &p, &()).err(),
            r.losses.create("l1", &p, &()).err(),
            r.activations.create("gelu", &p, &()).err(),
        ] {
            let err = err.expect("unknown key must fail");
            assert!(matches!(err, Error::UnknownKey(_)));
            assert!(err.to_string().starts_with("Unknown key provided: "));
        }
        assert_eq!(r.losses.create("huber", &p, &()).unwrap(), Loss::Huber);
    }
}
