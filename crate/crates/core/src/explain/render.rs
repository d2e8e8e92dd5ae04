//! Text, DOT and HTML renderers.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use html_escape::encode_text;

use super::{Condition, ConditionValue, Evidence, Report, ReportKind, RuleId};
use crate::error::{Error, Result};
use crate::tree::{classify_leaf, LeafClass, SplitKind, SurrogateTree, TreeNode};

/// Three decimals, keeping one decimal on whole numbers (`940.0`, `0.5`).
pub(crate) fn num(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    if !r.is_finite() {
        return format!("{v}");
    }
    if r == r.trunc() && r.abs() < 1e15 {
        format!("{:.1}", r + 0.0)
    } else {
        format!("{}", r + 0.0)
    }
}

fn small(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn condition_text(c: &Condition) -> String {
    let value = match &c.value {
        ConditionValue::Number(v) => num(*v),
        ConditionValue::Levels(l) => {
            let quoted: Vec<String> = l.iter().map(|s| format!("\"{s}\"")).collect();
            format!("{{{}}}", quoted.join(", "))
        }
    };
    format!("Feature \"{}\" {} {}", c.feature, c.op.text(), value)
}

const RULE1_TEXT: &str = "It is an anomaly since the continuous sample is clearly separated from learned groups.";

fn rule2_text(component: usize, weight: f64) -> String {
    format!(
        "It is an anomaly since the continuous sample is assigned to Gaussian {component}, which represents a tiny fraction ({}%) of samples.",
        num(weight * 100.0)
    )
}

/// Short human-readable text of one report.
pub(crate) fn summary(r: &Report) -> String {
    let mut s = String::new();
    match r.kind {
        ReportKind::Path => {
            let p = r.path.as_ref().expect("path report");
            let _ = writeln!(s, "Positive anomaly detection N({}).", r.rank);
            let _ = writeln!(s, "* Explanation:");
            for c in &p.conditions {
                let _ = writeln!(s, "--> {}", condition_text(c));
            }
            let _ = write!(
                s,
                "* These features place the item in a cluster containing {}%",
                num(p.leaf_share * 100.0)
            );
        }
        ReportKind::Combined => {
            let _ = writeln!(s, "Detected anomaly N({}):", r.rank);
            let _ = write!(s, "* Explanation:");
            let mut any = false;
            for v in r.verdicts.iter().filter(|v| v.fired) {
                any = true;
                match (&v.rule, &v.evidence) {
                    (RuleId::TinyComponent, Some(Evidence::ComponentShare { component, weight })) => {
                        let _ = write!(s, "\n-> (1) {}", rule2_text(*component, *weight));
                    }
                    _ => {
                        let _ = write!(s, "\n-> (1) {RULE1_TEXT}");
                    }
                }
            }
            for f in &r.findings {
                any = true;
                let _ = write!(
                    s,
                    "\n-> (2) The model considers improbable that a normal sample could have in the categorical feature \"{}\" a value of {}",
                    f.feature, f.observed
                );
                if let Some(c) = &f.involved_continuous {
                    let _ = write!(
                        s,
                        " knowing the continuous value of {} in the feature \"{}\".",
                        num(c.value),
                        c.feature
                    );
                }
            }
            if !any {
                let _ = write!(
                    s,
                    "\n-> No single rule or categorical term falls below its threshold; the detection comes from the joint score."
                );
            }
        }
    }
    s
}

/// `explanations.txt`: every report's summary, blank-line separated.
pub fn render_text(reports: &[Report]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.summary_text);
        out.push_str("\n\n");
    }
    out
}

pub fn write_reports_json(path: impl AsRef<Path>, reports: &[Report]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(reports).expect("reports serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

type Rgb = (f64, f64, f64);

fn lerp(a: Rgb, b: Rgb, t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c = |x: f64, y: f64| (x + (y - x) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

/// Fill color: a gradient inside each of the three estimator bands.
fn band_color(node: &TreeNode, tree: &SurrogateTree) -> String {
    let th = &tree.thresholds;
    match classify_leaf(node, th) {
        LeafClass::Anomalous => lerp((178.0, 24.0, 43.0), (244.0, 165.0, 130.0), node.mean / th.adt),
        LeafClass::Transition => lerp(
            (253.0, 219.0, 120.0),
            (255.0, 247.0, 188.0),
            (node.mean - th.adt) / (th.ndt - th.adt),
        ),
        LeafClass::Normal => "#a6d96a".to_string(),
    }
}

fn split_labels(tree: &SurrogateTree, node: &TreeNode) -> Option<(String, String, String)> {
    let split = node.split.as_ref()?;
    let name = tree.schema.feature_name(split.feature).to_string();
    let d = tree.schema.continuous_dim();
    Some(match &split.kind {
        SplitKind::Continuous { threshold } => {
            let t = num(tree.display_threshold(split.feature, *threshold));
            (name, format!("<= {t}"), format!("> {t}"))
        }
        SplitKind::Categorical { left_levels } => {
            let levels = &tree.schema.categorical[split.feature - d].levels;
            let set: Vec<&str> = left_levels.iter().map(|&l| levels[l as usize].as_str()).collect();
            let set = format!("{{{}}}", set.join(", "));
            (name, format!("in {set}"), format!("not in {set}"))
        }
    })
}

/// Graphviz rendering of `tree`. With `pruned`, nodes cut away by pruning
/// are drawn shaded.
pub fn render_dot(tree: &SurrogateTree, pruned: Option<&SurrogateTree>) -> String {
    let kept: Option<HashSet<usize>> = pruned.map(|p| p.nodes().iter().map(|n| n.id).collect());
    let is_kept = |n: &TreeNode| kept.as_ref().is_none_or(|k| k.contains(&n.id));
    let th = &tree.thresholds;
    let mut s = String::new();
    let _ = writeln!(s, "digraph tree {{");
    let _ = writeln!(
        s,
        "  graph [labelloc=b, fontname=\"Helvetica\", label=\"ADT = {} | NDT = {} | anomalous < ADT <= transition < NDT <= normal\"];",
        num(th.adt),
        num(th.ndt)
    );
    let _ = writeln!(s, "  node [shape=box, style=\"rounded,filled\", fontname=\"Helvetica\"];");
    let _ = writeln!(s, "  edge [fontname=\"Helvetica\"];");
    for node in tree.nodes() {
        let mut label = format!(
            "#{}\\n{:.2}%\\nvariance = {}",
            node.id,
            100.0 * node.count as f64 / tree.total_count as f64,
            small(node.variance)
        );
        if let Some(sv) = node.split_variance() {
            let _ = write!(label, "\\nweighted child variance = {}", small(sv));
        }
        let _ = write!(label, "\\nmean = {:.4} +/- {:.4}", node.mean, node.std_dev());
        let split = split_labels(tree, node);
        if let Some((name, _, _)) = &split {
            let _ = write!(label, "\\n{}", dot_escape(name));
        }
        if is_kept(node) {
            let _ = writeln!(s, "  n{} [label=\"{}\", fillcolor=\"{}\"];", node.id, label, band_color(node, tree));
        } else {
            let _ = writeln!(
                s,
                "  n{} [label=\"{}\", fillcolor=\"#d9d9d9\", fontcolor=\"#7f7f7f\", style=\"rounded,filled,dashed\"];",
                node.id, label
            );
        }
        if let (Some((_, left, right)), Some((l, r))) = (split, node.children()) {
            for (child, text) in [(l, left), (r, right)] {
                let style = if is_kept(child) { "" } else { ", style=dashed, color=\"#9f9f9f\"" };
                let _ = writeln!(s, "  n{} -> n{} [label=\"{}\"{}];", node.id, child.id, dot_escape(&text), style);
            }
        }
    }
    s.push_str("}\n");
    s
}

fn li(out: &mut String, text: &str) {
    let _ = writeln!(out, "<li>{}</li>", encode_text(text));
}

/// `report.html`: one section per report.
pub fn render_html(reports: &[Report]) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Anomaly explanations</title>\n\
         <style>body{font-family:monospace} section{margin-bottom:2em}</style>\n</head>\n<body>\n",
    );
    for r in reports {
        out.push_str("<section class=\"report\">\n");
        match r.kind {
            ReportKind::Path => {
                let p = r.path.as_ref().expect("path report");
                let _ = writeln!(out, "<h2>{}</h2>", encode_text(&format!("Positive anomaly detection N({}).", r.rank)));
                out.push_str("<h3>* Explanation:</h3>\n<ul>\n");
                for c in &p.conditions {
                    li(&mut out, &condition_text(c));
                }
                out.push_str("</ul>\n");
                let _ = writeln!(
                    out,
                    "<p>{}</p>",
                    encode_text(&format!(
                        "* These features place the item in a cluster containing {}%",
                        num(p.leaf_share * 100.0)
                    ))
                );
            }
            ReportKind::Combined => render_combined(&mut out, r),
        }
        out.push_str("</section>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

fn render_combined(out: &mut String, r: &Report) {
    let d = r.details.as_ref().expect("combined report details");
    let _ = writeln!(out, "<h2>{}</h2>", encode_text(&format!("Detected anomaly N({}):", r.rank)));
    out.push_str("<h3>** Continuous vector details (1):</h3>\n<ul>\n");
    if let Some(g) = d.predicted_gaussian {
        li(out, &format!("Predicted Gaussian (class): {g}"));
    }
    li(out, &format!("Continuous anomalous estimator: {}", num(d.log_continuous)));
    out.push_str("<li>Rule-based explanation (1):\n<ul>\n");
    let mut fired = false;
    for v in r.verdicts.iter().filter(|v| v.fired) {
        fired = true;
        match (&v.rule, &v.evidence) {
            (RuleId::TinyComponent, Some(Evidence::ComponentShare { component, weight })) => {
                li(out, &format!("Second rule is fired -- {}", rule2_text(*component, *weight)));
            }
            _ => li(
                out,
                "First rule is fired -- It is an anomaly since continuous sample is clearly separated from learned groups.",
            ),
        }
    }
    if !fired {
        li(out, "No rule is fired");
    }
    if !d.component_log_pdfs.is_empty() {
        li(
            out,
            &format!(
                "Continuous pattern information: probability of belonging to each of the Gaussians (classes from 0 to {}):",
                d.component_log_pdfs.len() - 1
            ),
        );
        for (i, v) in d.component_log_pdfs.iter().enumerate() {
            li(out, &format!("pdf(class={i}) = {}", num(*v)));
        }
    }
    out.push_str("</ul>\n</li>\n</ul>\n");

    out.push_str("<h3>** Categorical vector details (2):</h3>\n<ul>\n");
    li(out, &format!("Logistic estimator: {}", num(d.log_categorical)));
    li(out, &format!("Average categorical estimator: {}", num(d.average_estimator)));
    let n = r.findings.len();
    li(out, &format!("Number of categorical estimators detected below anomalous threshold: {n}"));
    for (k, f) in r.findings.iter().enumerate() {
        let tag = format!("[{}/{n}]", k + 1);
        li(
            out,
            &format!(
                "{tag} It is an anomaly since categorical feature \"{}\" has a value of {}",
                f.feature, f.observed
            ),
        );
        li(out, &format!("{tag} Categorical estimator value: {}", num(f.estimator)));
        if let Some(c) = &f.involved_continuous {
            li(
                out,
                &format!("{tag} Involved continuous feature \"{}\" with value {}.", c.feature, num(c.value)),
            );
        }
    }
    out.push_str("</ul>\n");
}
