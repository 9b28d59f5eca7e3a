//! Versioned prompt templates with `{{slot}}` placeholders.

use std::collections::BTreeMap;

use super::GatewayError;

pub const EXECUTOR: &str = "executor/v1";
pub const REFLECT: &str = "reflect/v1";
pub const CONSOLIDATE: &str = "consolidate/v1";
pub const REVISE_BODY: &str = "revise_body/v1";
pub const UPDATE_APPENDIX: &str = "update_appendix/v1";
pub const REWRITE: &str = "rewrite/v1";

const BUILTIN: [(&str, &str); 6] = [
    (EXECUTOR, include_str!("../../templates/executor.v1.txt")),
    (REFLECT, include_str!("../../templates/reflect.v1.txt")),
    (CONSOLIDATE, include_str!("../../templates/consolidate.v1.txt")),
    (REVISE_BODY, include_str!("../../templates/revise_body.v1.txt")),
    (UPDATE_APPENDIX, include_str!("../../templates/update_appendix.v1.txt")),
    (REWRITE, include_str!("../../templates/rewrite.v1.txt")),
];

pub fn builtin(id: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(k, _)| *k == id).map(|(_, t)| *t)
}

pub fn ids() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(k, _)| *k)
}

/// Slot names in order of first appearance.
pub fn slots(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let name = after[..end].trim();
        if !out.contains(&name) {
            out.push(name);
        }
        rest = &after[end + 2..];
    }
    out
}

/// Fills every slot. Values are inserted verbatim and never re-scanned.
pub fn render(template: &str, vars: &BTreeMap<&str, String>) -> Result<String, GatewayError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let name = after[..end].trim();
        let value = vars
            .get(name)
            .ok_or_else(|| GatewayError::MissingSlot(name.to_string()))?;
        out.push_str(&rest[..start]);
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_renders_with_its_slots() {
        for id in ids() {
            let t = builtin(id).unwrap();
            let vars: BTreeMap<&str, String> = slots(t).into_iter().map(|s| (s, format!("<{s}>"))).collect();
            let out = render(t, &vars).unwrap();
            assert!(!out.contains("{{"), "{id}");
        }
    }

    #[test]
    fn missing_slot_is_an_error() {
        let vars = BTreeMap::new();
        assert!(matches!(render("a {{x}} b", &vars), Err(GatewayError::MissingSlot(s)) if s == "x"));
    }

    #[test]
    fn values_are_not_rescanned() {
        let vars = BTreeMap::from([("x", "{{y}}".to_string())]);
        assert_eq!(render("[{{x}}]", &vars).unwrap(), "[{{y}}]");
    }
}
