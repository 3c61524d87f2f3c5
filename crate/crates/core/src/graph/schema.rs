use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::EntitySchema;
use crate::kb::{KbEntityType, KbRelation};

pub const PATIENT: &str = "Patient";

/// Patient-side relation for a recognized entity type.
pub fn emr_relation(entity_type: &str) -> String {
    match entity_type {
        "Disease" => "HasDisease".into(),
        "Symptom" => "HasSymptom".into(),
        "Operation" => "Underwent".into(),
        "Treatment" => "ReceivedTreatment".into(),
        "Condition" => "HasCondition".into(),
        "Check" => "HasCheck".into(),
        "BodyCheck" => "HasBodyCheck".into(),
        other => format!("Has{other}"),
    }
}

/// Node labels and the `(head label, tail label)` pairs each relation may
/// connect: the patient label, the recognized entity types and the
/// knowledge-base entity types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSchema {
    entity_types: EntitySchema,
    labels: BTreeSet<String>,
    relations: BTreeMap<String, BTreeSet<(String, String)>>,
}

impl GraphSchema {
    pub fn new(entity_types: &EntitySchema) -> Self {
        let mut labels: BTreeSet<String> = BTreeSet::new();
        labels.insert(PATIENT.to_string());
        labels.extend(entity_types.types().iter().cloned());
        labels.extend(KbEntityType::ALL.iter().map(|t| t.label().to_string()));

        let mut relations: BTreeMap<String, BTreeSet<(String, String)>> = BTreeMap::new();
        for r in KbRelation::ALL {
            let (h, t) = r.endpoints();
            relations.entry(r.name().to_string()).or_default().insert((h.label().to_string(), t.label().to_string()));
        }
        for t in entity_types.types() {
            relations.entry(emr_relation(t)).or_default().insert((PATIENT.to_string(), t.clone()));
        }
        Self { entity_types: entity_types.clone(), labels, relations }
    }

    pub fn entity_types(&self) -> &EntitySchema {
        &self.entity_types
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.contains(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn has_relation(&self, relation: &str) -> bool {
        self.relations.contains_key(relation)
    }

    pub fn allows(&self, relation: &str, head_label: &str, tail_label: &str) -> bool {
        self.relations.get(relation).is_some_and(|s| s.contains(&(head_label.to_string(), tail_label.to_string())))
    }
}

impl Default for GraphSchema {
    fn default() -> Self {
        Self::new(&EntitySchema::default())
    }
}

/// Identity key for names: surrounding whitespace trimmed and full-width
/// ASCII forms folded to half-width.
pub fn normalize_name(name: &str) -> String {
    name.trim()
        .chars()
        .map(|c| match c {
            '\u{3000}' => ' ',
            '\u{FF01}'..='\u{FF5E}' => char::from_u32(c as u32 - 0xFEE0).unwrap_or(c),
            _ => c,
        })
        .collect::<String>()
        .trim()
        .to_string()
}
