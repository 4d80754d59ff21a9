//! Event schema: the inventory of event types and their role sets, plus
//! schema-based prompt construction (including the label-blind variant).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sentinel strings shared by the record grammar and the backends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    /// Mask token used in prompts; backends map it to their own vocabulary.
    #[serde(rename = "mask", default = "default_mask")]
    pub mask_token: String,
    /// Separator between demonstration, sentence, and prompt segments.
    #[serde(rename = "sep", default = "default_sep")]
    pub sep_token: String,
    /// Padding word for roles without arguments.
    #[serde(default = "default_pad_word")]
    pub pad_word: String,
    /// Joiner for multiple arguments of the same role.
    #[serde(default = "default_arg_joiner")]
    pub arg_joiner: String,
}

fn default_mask() -> String {
    "<Mask>".to_string()
}
fn default_sep() -> String {
    "<SEP>".to_string()
}
fn default_pad_word() -> String {
    "None".to_string()
}
fn default_arg_joiner() -> String {
    "&".to_string()
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            mask_token: default_mask(),
            sep_token: default_sep(),
            pad_word: default_pad_word(),
            arg_joiner: default_arg_joiner(),
        }
    }
}

/// One event type and its ordered role list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTypeDef {
    pub name: String,
    pub roles: Vec<String>,
}

impl EventTypeDef {
    pub fn new(name: impl Into<String>, roles: &[&str]) -> Self {
        Self {
            name: name.into(),
            roles: roles.iter().map(|r| r.to_string()).collect(),
        }
    }
}

/// Ordered event type inventory. Ordering in the source file defines schema
/// order, which every downstream operation preserves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchema {
    pub event_types: Vec<EventTypeDef>,
    #[serde(default)]
    pub special_tokens: SpecialTokens,
}

/// A schema-based prompt for one event type.
///
/// `event_type` always holds the real type name, even in the label-blind
/// variant where `text` carries placeholder labels instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub event_type: String,
    pub text: String,
    pub label_blind: bool,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("failed to read schema file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema file {path} is not valid JSON: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid schema: {0}")]
    Validation(String),
    #[error("unknown event type: {0}")]
    UnknownEventType(String),
}

impl EventSchema {
    pub fn new(event_types: Vec<EventTypeDef>) -> Result<Self, SchemaError> {
        let schema = Self {
            event_types,
            special_tokens: SpecialTokens::default(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Checks name uniqueness and the substrings that would make the record
    /// grammar ambiguous (" is " inside a label, or a period followed by a
    /// space).
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen_types = HashSet::new();
        for def in &self.event_types {
            check_label("event type", &def.name)?;
            if !seen_types.insert(def.name.as_str()) {
                return Err(SchemaError::Validation(format!(
                    "duplicate event type name '{}'",
                    def.name
                )));
            }
            let mut seen_roles = HashSet::new();
            for role in &def.roles {
                check_label("role", role)?;
                if !seen_roles.insert(role.as_str()) {
                    return Err(SchemaError::Validation(format!(
                        "duplicate role '{}' in event type '{}'",
                        role, def.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let schema: EventSchema =
            serde_json::from_str(&raw).map_err(|source| SchemaError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SchemaError> {
        let path = path.as_ref();
        let raw = serde_json::to_string_pretty(self).expect("schema serializes");
        fs::write(path, raw).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn type_index(&self, event_type: &str) -> Option<usize> {
        self.event_types.iter().position(|d| d.name == event_type)
    }

    pub fn type_def(&self, event_type: &str) -> Option<&EventTypeDef> {
        self.event_types.iter().find(|d| d.name == event_type)
    }

    pub fn roles_of(&self, event_type: &str) -> Result<&[String], SchemaError> {
        self.type_def(event_type)
            .map(|d| d.roles.as_slice())
            .ok_or_else(|| SchemaError::UnknownEventType(event_type.to_string()))
    }

    pub fn type_names(&self) -> impl Iterator<Item = &str> {
        self.event_types.iter().map(|d| d.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.event_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event_types.is_empty()
    }

    /// SHA-256 over the canonical JSON form, used to stamp checkpoints and
    /// run manifests.
    pub fn digest(&self) -> String {
        let raw = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&raw))
    }

    /// Placeholder name for an event type in the label-blind ablation.
    pub fn blind_type_name(type_index: usize) -> String {
        format!("T{type_index}")
    }

    /// Placeholder name for a role in the label-blind ablation.
    pub fn blind_role_name(type_index: usize, role_index: usize) -> String {
        format!("R{type_index}{role_index}")
    }

    /// Inverts a blind type placeholder ("T3" -> index 3).
    pub fn invert_blind_type_name(name: &str) -> Option<usize> {
        name.strip_prefix('T')?.parse().ok()
    }

    /// Inverts a blind role placeholder given its type index
    /// ("R30" with type index 3 -> role index 0).
    pub fn invert_blind_role_name(name: &str, type_index: usize) -> Option<usize> {
        name.strip_prefix('R')?
            .strip_prefix(&type_index.to_string())?
            .parse()
            .ok()
    }

    /// The schema with every label replaced by its deterministic placeholder.
    /// Placeholders are valid labels, so the result is a valid schema with
    /// identical shape.
    pub fn blinded(&self) -> EventSchema {
        let event_types = self
            .event_types
            .iter()
            .enumerate()
            .map(|(i, def)| EventTypeDef {
                name: Self::blind_type_name(i),
                roles: (0..def.roles.len())
                    .map(|j| Self::blind_role_name(i, j))
                    .collect(),
            })
            .collect();
        EventSchema {
            event_types,
            special_tokens: self.special_tokens.clone(),
        }
    }
}

fn check_label(kind: &str, name: &str) -> Result<(), SchemaError> {
    if name.is_empty() {
        return Err(SchemaError::Validation(format!("empty {kind} name")));
    }
    if name.contains(" is ") {
        return Err(SchemaError::Validation(format!(
            "{kind} name '{name}' contains the reserved substring \" is \""
        )));
    }
    if name.contains(". ") {
        return Err(SchemaError::Validation(format!(
            "{kind} name '{name}' contains a period followed by a space"
        )));
    }
    Ok(())
}

/// Renders "Event type is {E}. Event trigger is {mask}." followed by one
/// "{role} is {mask}." clause per role in schema order.
pub fn build_prompt(schema: &EventSchema, event_type: &str) -> Result<Prompt, SchemaError> {
    let def = schema
        .type_def(event_type)
        .ok_or_else(|| SchemaError::UnknownEventType(event_type.to_string()))?;
    Ok(Prompt {
        event_type: event_type.to_string(),
        text: prompt_text(&def.name, &def.roles, &schema.special_tokens.mask_token),
        label_blind: false,
    })
}

/// Same shape as [`build_prompt`] but with every label replaced by its
/// indexed placeholder, for the ablation that withholds label semantics.
pub fn build_label_blind_prompt(
    schema: &EventSchema,
    event_type: &str,
) -> Result<Prompt, SchemaError> {
    let idx = schema
        .type_index(event_type)
        .ok_or_else(|| SchemaError::UnknownEventType(event_type.to_string()))?;
    let def = &schema.event_types[idx];
    let blind_roles: Vec<String> = (0..def.roles.len())
        .map(|j| EventSchema::blind_role_name(idx, j))
        .collect();
    Ok(Prompt {
        event_type: event_type.to_string(),
        text: prompt_text(
            &EventSchema::blind_type_name(idx),
            &blind_roles,
            &schema.special_tokens.mask_token,
        ),
        label_blind: true,
    })
}

fn prompt_text(type_label: &str, roles: &[String], mask: &str) -> String {
    let mut text = format!("Event type is {type_label}. Event trigger is {mask}.");
    for role in roles {
        text.push_str(&format!(" {role} is {mask}."));
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transport_schema() -> EventSchema {
        EventSchema::new(vec![
            EventTypeDef::new(
                "Transport",
                &["Artifact", "Origin", "Destination", "Vehicle"],
            ),
            EventTypeDef::new("Meet", &["Entity", "Place"]),
            EventTypeDef::new("Bare", &[]),
        ])
        .unwrap()
    }

    #[test]
    fn prompt_matches_template() {
        let schema = transport_schema();
        let p = build_prompt(&schema, "Transport").unwrap();
        assert_eq!(
            p.text,
            "Event type is Transport. Event trigger is <Mask>. Artifact is <Mask>. \
             Origin is <Mask>. Destination is <Mask>. Vehicle is <Mask>."
        );
        assert!(!p.label_blind);
    }

    #[test]
    fn prompt_mask_count_is_one_plus_roles() {
        let schema = transport_schema();
        for def in &schema.event_types {
            let p = build_prompt(&schema, &def.name).unwrap();
            let masks = p.text.matches("<Mask>").count();
            assert_eq!(masks, 1 + def.roles.len(), "type {}", def.name);
        }
    }

    #[test]
    fn zero_role_prompt() {
        let schema = transport_schema();
        let p = build_prompt(&schema, "Bare").unwrap();
        assert_eq!(p.text, "Event type is Bare. Event trigger is <Mask>.");
    }

    #[test]
    fn unknown_type_is_an_error() {
        let schema = transport_schema();
        assert!(matches!(
            build_prompt(&schema, "Nope"),
            Err(SchemaError::UnknownEventType(_))
        ));
        assert!(matches!(
            build_label_blind_prompt(&schema, "Nope"),
            Err(SchemaError::UnknownEventType(_))
        ));
    }

    #[test]
    fn blind_prompt_uses_indexed_placeholders() {
        let schema = transport_schema();
        let p = build_label_blind_prompt(&schema, "Meet").unwrap();
        assert_eq!(
            p.text,
            "Event type is T1. Event trigger is <Mask>. R10 is <Mask>. R11 is <Mask>."
        );
        assert!(p.label_blind);
        assert_eq!(p.event_type, "Meet");
    }

    #[test]
    fn blind_prompt_differs_only_at_label_positions() {
        let schema = transport_schema();
        for (i, def) in schema.event_types.iter().enumerate() {
            let plain = build_prompt(&schema, &def.name).unwrap().text;
            let blind = build_label_blind_prompt(&schema, &def.name).unwrap().text;
            // Replacing labels with placeholders must reproduce the blind text.
            let mut rebuilt = plain.replacen(
                &format!("Event type is {}.", def.name),
                &format!("Event type is {}.", EventSchema::blind_type_name(i)),
                1,
            );
            for (j, role) in def.roles.iter().enumerate() {
                rebuilt = rebuilt.replacen(
                    &format!(" {role} is "),
                    &format!(" {} is ", EventSchema::blind_role_name(i, j)),
                    1,
                );
            }
            assert_eq!(rebuilt, blind, "type {}", def.name);
        }
    }

    #[test]
    fn blind_mapping_round_trips() {
        let schema = transport_schema();
        for (i, def) in schema.event_types.iter().enumerate() {
            let blind_type = EventSchema::blind_type_name(i);
            assert_eq!(EventSchema::invert_blind_type_name(&blind_type), Some(i));
            for (j, _) in def.roles.iter().enumerate() {
                let blind_role = EventSchema::blind_role_name(i, j);
                assert_eq!(
                    EventSchema::invert_blind_role_name(&blind_role, i),
                    Some(j)
                );
            }
        }
    }

    #[test]
    fn blinded_schema_preserves_shape_and_validates() {
        let schema = transport_schema();
        let blinded = schema.blinded();
        blinded.validate().unwrap();
        assert_eq!(blinded.len(), schema.len());
        for (orig, blind) in schema.event_types.iter().zip(&blinded.event_types) {
            assert_eq!(orig.roles.len(), blind.roles.len());
        }
    }

    #[test]
    fn label_substring_rules() {
        // "is a" has no " is " substring and is accepted.
        assert!(EventSchema::new(vec![EventTypeDef::new("Meet", &["is a"])]).is_ok());
        // "x is y" carries the reserved substring.
        assert!(matches!(
            EventSchema::new(vec![EventTypeDef::new("Meet", &["x is y"])]),
            Err(SchemaError::Validation(_))
        ));
        // period followed by space
        assert!(matches!(
            EventSchema::new(vec![EventTypeDef::new("U.S. attack", &[])]),
            Err(SchemaError::Validation(_))
        ));
        // bare trailing period is fine
        assert!(EventSchema::new(vec![EventTypeDef::new("U.S", &[])]).is_ok());
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(matches!(
            EventSchema::new(vec![
                EventTypeDef::new("A", &[]),
                EventTypeDef::new("A", &[]),
            ]),
            Err(SchemaError::Validation(_))
        ));
        assert!(matches!(
            EventSchema::new(vec![EventTypeDef::new("A", &["R", "R"])]),
            Err(SchemaError::Validation(_))
        ));
    }

    #[test]
    fn load_save_round_trip() {
        let schema = transport_schema();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        schema.save(&path).unwrap();
        let reloaded = EventSchema::load(&path).unwrap();
        assert_eq!(schema, reloaded);
        // and once more through serialization
        reloaded.save(&path).unwrap();
        assert_eq!(EventSchema::load(&path).unwrap(), schema);
    }

    #[test]
    fn load_accepts_interface_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        std::fs::write(
            &path,
            r#"{"event_types":[{"name":"Transport","roles":["Artifact","Origin"]}],
                "special_tokens":{"mask":"<Mask>","sep":"<SEP>","pad_word":"None","arg_joiner":"&"}}"#,
        )
        .unwrap();
        let schema = EventSchema::load(&path).unwrap();
        assert_eq!(schema.event_types[0].name, "Transport");
        assert_eq!(schema.special_tokens.mask_token, "<Mask>");
    }

    #[test]
    fn load_defaults_special_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        std::fs::write(&path, r#"{"event_types":[{"name":"A","roles":[]}]}"#).unwrap();
        let schema = EventSchema::load(&path).unwrap();
        assert_eq!(schema.special_tokens, SpecialTokens::default());
    }

    #[test]
    fn one_type_zero_roles_is_valid() {
        let schema = EventSchema::new(vec![EventTypeDef::new("Solo", &[])]).unwrap();
        assert_eq!(schema.len(), 1);
    }
}
