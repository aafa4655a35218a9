//! COCO ∪ LVIS category names, used to flag semantic-grounding answers
//! that do not name a known category.

use std::collections::HashSet;
use std::sync::OnceLock;

const COCO: &str = include_str!("../../assets/coco_categories.txt");
const LVIS: &str = include_str!("../../assets/lvis_categories.txt");

/// Trim, lower-case, and collapse internal whitespace runs to one space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    names: HashSet<String>,
}

impl Vocabulary {
    /// Builds from lines of `/`-separated synonyms.
    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Self {
        let names = lines
            .into_iter()
            .flat_map(|line| line.split('/'))
            .map(normalize_text)
            .filter(|n| !n.is_empty())
            .collect();
        Self { names }
    }

    /// The bundled COCO (80) and LVIS (1203) category names.
    pub fn bundled() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| Vocabulary::from_lines(COCO.lines().chain(LVIS.lines())))
    }

    pub fn contains(&self, text: &str) -> bool {
        self.names.contains(&normalize_text(text))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}
