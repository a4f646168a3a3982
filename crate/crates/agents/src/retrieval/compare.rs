use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Comparison aspects, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Goals,
    Datasets,
    Methods,
    EvaluationProtocols,
    Limitations,
}

impl Aspect {
    pub const ALL: [Aspect; 5] =
        [Self::Goals, Self::Datasets, Self::Methods, Self::EvaluationProtocols, Self::Limitations];

    pub fn key(self) -> &'static str {
        match self {
            Self::Goals => "goals",
            Self::Datasets => "datasets",
            Self::Methods => "methods",
            Self::EvaluationProtocols => "evaluation_protocols",
            Self::Limitations => "limitations",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Goals => "Goals",
            Self::Datasets => "Datasets",
            Self::Methods => "Methods",
            Self::EvaluationProtocols => "Evaluation protocols",
            Self::Limitations => "Limitations",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    Same,
    Partial,
    Different,
    MissingInMine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectComparison {
    pub mine: String,
    pub theirs: String,
    pub overlap: Overlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub aspects: BTreeMap<Aspect, AspectComparison>,
    /// `(aspect label, mine, theirs)` rows in aspect order.
    pub summary_table: Vec<[String; 3]>,
}

impl ComparisonReport {
    /// Builds the report; every aspect must be present.
    pub fn new(aspects: BTreeMap<Aspect, AspectComparison>) -> Result<Self, Aspect> {
        if let Some(missing) = Aspect::ALL.into_iter().find(|a| !aspects.contains_key(a)) {
            return Err(missing);
        }
        let summary_table = Aspect::ALL
            .iter()
            .map(|a| {
                let c = &aspects[a];
                [a.label().to_owned(), c.mine.clone(), c.theirs.clone()]
            })
            .collect();
        Ok(Self { aspects, summary_table })
    }
}

/// Escapes LaTeX special characters so the text typesets literally.
pub fn escape_latex(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' | '%' | '$' | '#' | '_' | '{' | '}' => {
                out.push('\\');
                out.push(c);
            }
            '~' => out.push_str("\\textasciitilde{}"),
            '^' => out.push_str("\\textasciicircum{}"),
            '\\' => out.push_str("\\textbackslash{}"),
            '\n' | '\r' => out.push(' '),
            _ => out.push(c),
        }
    }
    out
}

/// A `tabular` with a header row and one row per aspect.
pub fn render_comparison_table(report: &ComparisonReport) -> String {
    let mut out = String::from("\\begin{tabular}{p{0.2\\linewidth}p{0.38\\linewidth}p{0.38\\linewidth}}\n\\hline\n");
    out.push_str("Aspect & This work & Compared work \\\\\n\\hline\n");
    for row in &report.summary_table {
        let cells: Vec<String> = row.iter().map(|c| escape_latex(c)).collect();
        out.push_str(&cells.join(" & "));
        out.push_str(" \\\\\n");
    }
    out.push_str("\\hline\n\\end{tabular}\n");
    out
}
