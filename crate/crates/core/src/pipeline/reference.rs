//! Published scores, kept as fixed reference constants for side-by-side
//! display. They are full-corpus results and are not reproduced here.

use std::fmt::Write;

use crate::metrics::EvaluationReport;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub name: &'static str,
    pub mean: f64,
    /// Openness, conscientiousness, extraversion, agreeableness, neuroticism.
    pub per_trait: Option<[f64; 5]>,
    pub split: &'static str,
    pub citation: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceScores {
    pub methods: &'static [ReferenceRow],
    pub subnets: &'static [ReferenceRow],
    pub fusion_steps: &'static [ReferenceRow],
    pub test: &'static [ReferenceRow],
}

const METHODS_CITE: &str = "published validation comparison of approaches";
const SUBNETS_CITE: &str = "published validation scores of the single-modality subnetworks";
const FUSION_CITE: &str = "published validation scores while adding modalities";
const TEST_CITE: &str = "published test-set score of NJU-LAMDA";

const fn row(name: &'static str, mean: f64, per_trait: Option<[f64; 5]>, split: &'static str, citation: &'static str) -> ReferenceRow {
    ReferenceRow {
        name,
        mean,
        per_trait,
        split,
        citation,
    }
}

pub const METHOD_ROWS: [ReferenceRow; 6] = [
    row("DCC", 0.9122, Some([0.9117, 0.9133, 0.9110, 0.9158, 0.9091]), "validation", METHODS_CITE),
    row("evolgen", 0.9134, Some([0.9130, 0.9136, 0.9145, 0.9157, 0.9098]), "validation", METHODS_CITE),
    row("Gurpinar et al.", 0.9147, Some([0.9141, 0.9141, 0.9186, 0.9143, 0.9123]), "validation", METHODS_CITE),
    row("PML", 0.9155, Some([0.9138, 0.9166, 0.9175, 0.9166, 0.9130]), "validation", METHODS_CITE),
    row("BU-NKU", 0.9170, Some([0.9169, 0.9166, 0.9206, 0.9161, 0.9149]), "validation", METHODS_CITE),
    row("Proposed (four-modality fusion)", 0.9188, Some([0.9166, 0.9214, 0.9208, 0.9189, 0.9162]), "validation", METHODS_CITE),
];

pub const SUBNET_ROWS: [ReferenceRow; 12] = [
    row("Ambient: CNN", 0.9012, None, "validation", SUBNETS_CITE),
    row("Ambient: 3D-CNN", 0.8962, None, "validation", SUBNETS_CITE),
    row("Ambient: Inception-v2", 0.9089, None, "validation", SUBNETS_CITE),
    row("Ambient: ResNet-v2-101", 0.9116, None, "validation", SUBNETS_CITE),
    row("Face: MTCNN + Inception-v2", 0.9067, None, "validation", SUBNETS_CITE),
    row("Face: MTCNN + ResNet-v2-101", 0.9136, None, "validation", SUBNETS_CITE),
    row("Face: Dlib + Inception-v2", 0.9058, None, "validation", SUBNETS_CITE),
    row("Face: Dlib + ResNet-v2-101", 0.9107, None, "validation", SUBNETS_CITE),
    row("Audio: VGGish", 0.9049, None, "validation", SUBNETS_CITE),
    row("Transcription: USE_T", 0.8869, None, "validation", SUBNETS_CITE),
    row("Transcription: ELMo", 0.8872, None, "validation", SUBNETS_CITE),
    row("Transcription: Skip-gram", 0.8870, None, "validation", SUBNETS_CITE),
];

pub const FUSION_ROWS: [ReferenceRow; 3] = [
    row("Ambient + audio", 0.9163, None, "validation", FUSION_CITE),
    row("Ambient + audio + face", 0.9185, None, "validation", FUSION_CITE),
    row("Ambient + audio + face + transcription", 0.9188, None, "validation", FUSION_CITE),
];

pub const TEST_ROWS: [ReferenceRow; 1] = [row(
    "NJU-LAMDA",
    0.9130,
    Some([0.9123, 0.9166, 0.9133, 0.9126, 0.9100]),
    "test",
    TEST_CITE,
)];

pub const REFERENCE_SCORES: ReferenceScores = ReferenceScores {
    methods: &METHOD_ROWS,
    subnets: &SUBNET_ROWS,
    fusion_steps: &FUSION_ROWS,
    test: &TEST_ROWS,
};

impl ReferenceScores {
    pub fn find(&self, name: &str) -> Option<&ReferenceRow> {
        self.methods
            .iter()
            .chain(self.subnets)
            .chain(self.fusion_steps)
            .chain(self.test)
            .find(|r| r.name == name)
    }
}

fn cells(mean: f64, per_trait: Option<[f64; 5]>) -> String {
    let mut s = format!("{mean:>8.4}");
    match per_trait {
        Some(t) => t.iter().for_each(|v| write!(s, " {v:>8.4}").expect("string write")),
        None => (0..5).for_each(|_| s.push_str(&format!(" {:>8}", "-"))),
    }
    s
}

fn section(out: &mut String, title: &str, rows: &[ReferenceRow]) {
    let Some(first) = rows.first() else { return };
    writeln!(out, "\n{title} [reference constants; source: {}]", first.citation).expect("string write");
    for r in rows {
        writeln!(out, "  {:<40} {:<10} {}", r.name, r.split, cells(r.mean, r.per_trait)).expect("string write");
    }
}

/// Plain-text table: this run's scores followed by the published constants.
pub fn emit_comparison_table(report: &EvaluationReport, refs: &ReferenceScores) -> String {
    let mut out = String::new();
    writeln!(out, "  {:<40} {:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "Method", "Split", "Mean", "Open.", "Cons.", "Extr.", "Agre.", "Neur.")
        .expect("string write");
    let name = if report.model.is_empty() { "this run".to_string() } else { format!("this run ({})", report.model) };
    let split = if report.split.is_empty() { "-" } else { &report.split };
    writeln!(
        out,
        "  {:<40} {:<10} {}  (N = {}, measured)",
        name,
        split,
        cells(report.mean_accuracy, Some(report.per_trait_accuracy)),
        report.n_videos
    )
    .expect("string write");
    out.push_str("\nPublished values below are reference constants from the full challenge corpus, not results reproduced by this run.\n");
    section(&mut out, "Approaches", refs.methods);
    section(&mut out, "Single-modality subnetworks", refs.subnets);
    section(&mut out, "Adding modalities", refs.fusion_steps);
    section(&mut out, "Test set", refs.test);
    out
}
