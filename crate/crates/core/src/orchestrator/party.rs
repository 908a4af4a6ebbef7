use std::collections::BTreeMap;

use super::ledger::{CostLedger, PartyId, Phase};
use crate::models::Model;
use crate::{Error, Result};

/// Maps a boolean context signal to the model to run when it holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionRule {
    pub key: String,
    pub value: bool,
    pub model_id: String,
}

/// Models held by one party plus the rule table that picks one at inference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    models: BTreeMap<String, Model>,
    rules: Vec<SelectionRule>,
    default: Option<String>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a model. The first model registered becomes the
    /// default unless one is declared.
    pub fn insert(&mut self, id: impl Into<String>, model: Model) {
        let id = id.into();
        if self.default.is_none() {
            self.default = Some(id.clone());
        }
        self.models.insert(id, model);
    }

    pub fn remove(&mut self, id: &str) -> Option<Model> {
        let m = self.models.remove(id);
        if self.default.as_deref() == Some(id) {
            self.default = self.models.keys().next().cloned();
        }
        self.rules.retain(|r| r.model_id != id);
        m
    }

    pub fn set_default(&mut self, id: &str) -> Result<()> {
        if !self.models.contains_key(id) {
            return Err(Error::Contract(format!("default model '{id}' is not registered")));
        }
        self.default = Some(id.to_string());
        Ok(())
    }

    pub fn add_rule(&mut self, key: impl Into<String>, value: bool, model_id: impl Into<String>) -> Result<()> {
        let model_id = model_id.into();
        if !self.models.contains_key(&model_id) {
            return Err(Error::Contract(format!("rule targets unregistered model '{model_id}'")));
        }
        self.rules.push(SelectionRule {
            key: key.into(),
            value,
            model_id,
        });
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Model> {
        self.models.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.models.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn models(&self) -> impl Iterator<Item = &Model> {
        self.models.values()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn default_id(&self) -> Option<&str> {
        self.default.as_deref()
    }
}

/// Runtime signals such as `img → available`.
pub type Context = BTreeMap<String, bool>;

/// The server or an edge node.
#[derive(Debug, Clone, PartialEq)]
pub struct Party {
    pub id: PartyId,
    pub registry: Registry,
    pub context: Context,
}

impl Party {
    pub fn new(id: PartyId) -> Self {
        Self {
            id,
            registry: Registry::new(),
            context: Context::new(),
        }
    }
}

/// Picks the model a party runs for `context`.
///
/// Rules are tried in registration order; the first whose key is present
/// with the matching value wins, otherwise the declared default is used.
/// Context keys that no rule mentions produce a warning event. The choice
/// is logged as a zero-FLOP inference event.
pub fn select_student(party: &Party, context: &Context, ledger: &mut CostLedger) -> Result<String> {
    let reg = &party.registry;
    if reg.is_empty() {
        return Err(Error::Contract(format!("{} has an empty registry", party.id)));
    }
    for key in context.keys() {
        if !reg.rules.iter().any(|r| &r.key == key) {
            ledger.compute(party.id, 0, Phase::Inference, format!("warning: unknown context key '{key}'"));
        }
    }
    let chosen = reg
        .rules
        .iter()
        .find(|r| context.get(&r.key) == Some(&r.value))
        .map(|r| r.model_id.clone())
        .or_else(|| reg.default.clone())
        .ok_or_else(|| Error::Contract(format!("{} has no default model", party.id)))?;
    ledger.compute(party.id, 0, Phase::Inference, format!("select {chosen}"));
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, ModelSpec};
    use crate::numerics::Rng;

    fn model(input: usize) -> Model {
        init_model(&ModelSpec::new(input, vec![3], 1, 2), &mut Rng::new(1, 0)).unwrap()
    }

    #[test]
    fn single_model_always_selected() {
        let mut p = Party::new(PartyId::Node(0));
        p.registry.insert("only", model(4));
        let mut l = CostLedger::new();
        for ctx in [Context::new(), Context::from([("img".to_string(), false)])] {
            assert_eq!(select_student(&p, &ctx, &mut l).unwrap(), "only");
        }
    }

    #[test]
    fn rule_table_and_fallback() {
        let mut p = Party::new(PartyId::Node(1));
        p.registry.insert("full", model(8));
        p.registry.insert("radar_only", model(4));
        p.registry.add_rule("img", false, "radar_only").unwrap();
        let mut l = CostLedger::new();
        let ctx = Context::from([("img".to_string(), false)]);
        assert_eq!(select_student(&p, &ctx, &mut l).unwrap(), "radar_only");
        let ctx = Context::from([("img".to_string(), true)]);
        assert_eq!(select_student(&p, &ctx, &mut l).unwrap(), "full");
        let before = l.events().len();
        let ctx = Context::from([("lidar".to_string(), true)]);
        assert_eq!(select_student(&p, &ctx, &mut l).unwrap(), "full");
        let new = &l.events()[before..];
        assert!(new[0].label.starts_with("warning"));
        assert!(l.events().iter().all(|e| e.flops == 0 && e.bytes == 0));
    }

    #[test]
    fn empty_registry_is_an_error() {
        let p = Party::new(PartyId::Node(0));
        assert!(matches!(
            select_student(&p, &Context::new(), &mut CostLedger::new()),
            Err(Error::Contract(_))
        ));
    }
}
