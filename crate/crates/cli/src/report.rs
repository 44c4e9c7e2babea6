//! Static figures: the MAP tree with branch lengths and class prevalences,
//! and per-class item response profiles with credible-interval error bars.
//!
//! Layout is computed once into [`PlotData`]; the SVG is rendered from that
//! structure alone, so every number drawn is present in the plot-data JSON.

use std::fmt::Write as _;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use treelcm_core::summary::Interval;
use treelcm_core::{DdtTree, PosteriorSummary};

use crate::error::{CliError, CliResult};

pub const PLOT_SCHEMA_VERSION: u32 = 1;

const PALETTE: [&str; 10] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666", "#1f78b4",
    "#b15928",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlotOption {
    All,
    Tree,
    Profile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Style {
    pub font_size: f64,
    pub small_font_size: f64,
    pub stroke_width: f64,
    pub line_color: String,
    pub text_color: String,
    pub background: String,
}

impl Default for Style {
    fn default() -> Self {
        Self {
            font_size: 12.0,
            small_font_size: 9.0,
            stroke_width: 1.5,
            line_color: "#333333".into(),
            text_color: "#111111".into(),
            background: "#ffffff".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextMark {
    pub x: f64,
    pub y: f64,
    pub text: String,
    /// SVG text-anchor.
    pub anchor: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeLabel {
    /// Branch length of the edge, rounded as displayed.
    pub length: f64,
    pub label: TextMark,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafLabel {
    pub class: usize,
    pub prevalence: Interval,
    pub label: TextMark,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreePanel {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub newick: String,
    pub segments: Vec<Segment>,
    pub edge_labels: Vec<EdgeLabel>,
    pub leaf_labels: Vec<LeafLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub item: String,
    pub group: usize,
    pub color: String,
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub value: Interval,
    pub error_bar: Segment,
    pub tooltip: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPanel {
    pub class: usize,
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub header: TextMark,
    pub axis: Vec<Segment>,
    pub ticks: Vec<TextMark>,
    pub bars: Vec<Bar>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub group: String,
    pub color: String,
    pub x: f64,
    pub y: f64,
    pub size: f64,
    pub label: TextMark,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub schema_version: u32,
    pub option: PlotOption,
    pub view_box: [f64; 4],
    pub width: f64,
    pub height: f64,
    pub level: f64,
    pub style: Style,
    pub tree: Option<TreePanel>,
    pub profiles: Vec<ClassPanel>,
    pub legend: Vec<LegendEntry>,
}

/// Inputs to the layout, usually taken from a posterior summary.
#[derive(Clone, Debug)]
pub struct PlotInput {
    pub class_probability: Vec<Interval>,
    /// K x J.
    pub theta: Vec<Vec<Interval>>,
    pub item_labels: Vec<String>,
    pub group_names: Vec<String>,
    /// 0-based group of each item.
    pub group_of: Vec<usize>,
    pub map_tree: Option<DdtTree>,
    pub level: f64,
}

impl PlotInput {
    pub fn from_summary(s: &PosteriorSummary, item_labels: Option<Vec<String>>) -> CliResult<Self> {
        let j = s.theta.first().map_or(0, Vec::len);
        let mut group_of = vec![0; j];
        for (g, items) in s.item_membership.iter().enumerate() {
            for &item in items {
                if item == 0 || item > j {
                    return Err(CliError::schema(format!("item_membership[{g}]: item {item} out of 1..{j}")));
                }
                group_of[item - 1] = g;
            }
        }
        let group_names = if s.group_names.is_empty() { vec!["items".to_string()] } else { s.group_names.clone() };
        let item_labels = match item_labels {
            Some(l) => l,
            None if s.item_labels.len() == j => s.item_labels.clone(),
            None => (1..=j).map(|i| format!("item_{i}")).collect(),
        };
        if item_labels.len() != j {
            return Err(CliError::data(format!("{} item names for {j} items", item_labels.len())));
        }
        Ok(Self {
            class_probability: s.class_probability.clone(),
            theta: s.theta.clone(),
            item_labels,
            group_names,
            group_of,
            map_tree: Some(s.map_tree.clone()),
            level: s.level,
        })
    }
}

fn r2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn r3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn rounded(iv: &Interval) -> Interval {
    Interval { mean: r3(iv.mean), lower: r3(iv.lower), upper: r3(iv.upper) }
}

fn interval_text(iv: &Interval) -> String {
    format!("{:.2} ({:.2}, {:.2})", iv.mean, iv.lower, iv.upper)
}

fn text(x: f64, y: f64, t: String, anchor: &str) -> TextMark {
    TextMark { x: r2(x), y: r2(y), text: t, anchor: anchor.into() }
}

fn seg(x1: f64, y1: f64, x2: f64, y2: f64) -> Segment {
    Segment { x1: r2(x1), y1: r2(y1), x2: r2(x2), y2: r2(y2) }
}

const TREE_WIDTH: f64 = 460.0;
const LEAF_GAP: f64 = 40.0;
const PROFILE_WIDTH: f64 = 680.0;
const PANEL_HEIGHT: f64 = 130.0;
const BAR_AREA: f64 = 90.0;
const TOP: f64 = 20.0;

fn tree_panel(tree: &DdtTree, prevalence: &[Interval], x0: f64) -> CliResult<TreePanel> {
    let k = tree.n_leaves();
    if prevalence.len() != k {
        return Err(CliError::data(format!("{} prevalences for a tree with {k} leaves", prevalence.len())));
    }
    let scale = TREE_WIDTH - 190.0;
    let xt = |t: f64| x0 + 20.0 + t * scale;
    let mut y = vec![0.0; tree.n_nodes()];
    let mut next = 0;
    for v in tree.preorder() {
        if tree.is_leaf(v) {
            y[v] = TOP + 20.0 + LEAF_GAP * next as f64;
            next += 1;
        }
    }
    for v in tree.postorder() {
        if let Some([a, b]) = tree.children(v) {
            y[v] = 0.5 * (y[a] + y[b]);
        }
    }
    let mut segments = Vec::new();
    let mut edge_labels = Vec::new();
    for v in tree.preorder() {
        if let Some(p) = tree.parent(v) {
            let (xa, xb) = (xt(tree.time(p)), xt(tree.time(v)));
            segments.push(seg(xa, y[v], xb, y[v]));
            let len = r2(tree.branch_length(v));
            edge_labels.push(EdgeLabel {
                length: len,
                label: text(0.5 * (xa + xb), y[v] - 4.0, format!("{len:.2}"), "middle"),
            });
        }
        if let Some([a, b]) = tree.children(v) {
            segments.push(seg(xt(tree.time(v)), y[a], xt(tree.time(v)), y[b]));
        }
    }
    let leaf_labels = tree
        .leaves()
        .into_iter()
        .enumerate()
        .map(|(class, v)| {
            let p = rounded(&prevalence[class]);
            let name = tree.label(v).unwrap_or_default();
            LeafLabel {
                class: class + 1,
                prevalence: p,
                label: text(xt(1.0) + 6.0, y[v] + 4.0, format!("{name}: {}", interval_text(&p)), "start"),
            }
        })
        .collect();
    Ok(TreePanel {
        x: x0,
        y: 0.0,
        width: TREE_WIDTH,
        height: TOP + 20.0 + LEAF_GAP * k as f64,
        newick: tree.to_newick(),
        segments,
        edge_labels,
        leaf_labels,
    })
}

fn profile_panels(input: &PlotInput, x0: f64) -> Vec<ClassPanel> {
    let j = input.item_labels.len().max(1);
    let step = (PROFILE_WIDTH - 60.0) / j as f64;
    let left = x0 + 45.0;
    input
        .theta
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let py = TOP + c as f64 * PANEL_HEIGHT;
            let base = py + 20.0 + BAR_AREA;
            let yv = |p: f64| base - p * BAR_AREA;
            let prevalence = rounded(&input.class_probability[c]);
            let bars = row
                .iter()
                .enumerate()
                .map(|(jj, iv)| {
                    let v = rounded(iv);
                    let g = input.group_of[jj];
                    let bx = left + jj as f64 * step;
                    let bw = step * 0.8;
                    let item = input.item_labels[jj].clone();
                    Bar {
                        tooltip: format!("{item}: {}", interval_text(&v)),
                        item,
                        group: g + 1,
                        color: PALETTE[g % PALETTE.len()].into(),
                        x: r2(bx),
                        y: r2(yv(v.mean)),
                        width: r2(bw),
                        height: r2(yv(0.0) - yv(v.mean)),
                        error_bar: seg(bx + 0.5 * bw, yv(v.upper), bx + 0.5 * bw, yv(v.lower)),
                        value: v,
                    }
                })
                .collect();
            let ticks = [0.0, 0.5, 1.0]
                .iter()
                .map(|&p| text(left - 6.0, yv(p) + 3.0, format!("{p}"), "end"))
                .collect();
            ClassPanel {
                class: c + 1,
                x: x0,
                y: r2(py),
                width: PROFILE_WIDTH,
                height: PANEL_HEIGHT,
                header: text(
                    left,
                    py + 12.0,
                    format!("Class {}: {}", c + 1, interval_text(&prevalence)),
                    "start",
                ),
                axis: vec![
                    seg(left - 2.0, yv(0.0), left - 2.0, yv(1.0)),
                    seg(left - 2.0, yv(0.0), left + j as f64 * step, yv(0.0)),
                ],
                ticks,
                bars,
            }
        })
        .collect()
}

/// Compute the layout of a figure.
pub fn build_plot(input: &PlotInput, option: PlotOption) -> CliResult<PlotData> {
    let k = input.class_probability.len();
    if input.theta.len() != k {
        return Err(CliError::data(format!("{} profiles for {k} classes", input.theta.len())));
    }
    let j = input.item_labels.len();
    if input.theta.iter().any(|r| r.len() != j) || input.group_of.len() != j {
        return Err(CliError::data("profile rows, item names and groups differ in length"));
    }
    let tree = match option {
        PlotOption::Tree | PlotOption::All => {
            let t = input
                .map_tree
                .as_ref()
                .ok_or_else(|| CliError::data("tree plots need a MAP tree"))?;
            Some(tree_panel(t, &input.class_probability, 0.0)?)
        }
        PlotOption::Profile => None,
    };
    let profile_x = if tree.is_some() { TREE_WIDTH } else { 0.0 };
    let profiles = match option {
        PlotOption::Profile | PlotOption::All => profile_panels(input, profile_x),
        PlotOption::Tree => Vec::new(),
    };
    let body_height = tree
        .as_ref()
        .map_or(0.0, |t| t.height)
        .max(if profiles.is_empty() { 0.0 } else { TOP + PANEL_HEIGHT * k as f64 });
    let width = profile_x + if profiles.is_empty() { 0.0 } else { PROFILE_WIDTH };
    let legend = if profiles.is_empty() {
        Vec::new()
    } else {
        input
            .group_names
            .iter()
            .enumerate()
            .map(|(g, name)| {
                let x = profile_x + 45.0 + 95.0 * g as f64;
                let y = body_height + 10.0;
                LegendEntry {
                    group: name.clone(),
                    color: PALETTE[g % PALETTE.len()].into(),
                    x,
                    y,
                    size: 10.0,
                    label: text(x + 14.0, y + 9.0, name.clone(), "start"),
                }
            })
            .collect()
    };
    let height = body_height + if legend.is_empty() { 10.0 } else { 30.0 };
    Ok(PlotData {
        schema_version: PLOT_SCHEMA_VERSION,
        option,
        view_box: [0.0, 0.0, width, height],
        width,
        height,
        level: input.level,
        style: Style::default(),
        tree,
        profiles,
        legend,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn line(out: &mut String, s: &Segment, style: &Style, class: &str) {
    let _ = writeln!(
        out,
        r#"<line class="{class}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="{}"/>"#,
        s.x1, s.y1, s.x2, s.y2, style.line_color, style.stroke_width
    );
}

fn label(out: &mut String, t: &TextMark, size: f64, style: &Style, class: &str) {
    let _ = writeln!(
        out,
        r#"<text class="{class}" x="{}" y="{}" font-size="{size}" text-anchor="{}" fill="{}">{}</text>"#,
        t.x,
        t.y,
        t.anchor,
        style.text_color,
        escape(&t.text)
    );
}

/// Render plot data as a standalone SVG document.
pub fn render_svg(plot: &PlotData) -> String {
    let st = &plot.style;
    let [vx, vy, vw, vh] = plot.view_box;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="{vx} {vy} {vw} {vh}" font-family="sans-serif">"#,
        plot.width, plot.height
    );
    let _ = writeln!(out, r#"<rect x="{vx}" y="{vy}" width="{vw}" height="{vh}" fill="{}"/>"#, st.background);
    if let Some(tree) = &plot.tree {
        out.push_str("<g class=\"tree\">\n");
        for s in &tree.segments {
            line(&mut out, s, st, "branch");
        }
        for e in &tree.edge_labels {
            label(&mut out, &e.label, st.small_font_size, st, "edge-label");
        }
        for l in &tree.leaf_labels {
            label(&mut out, &l.label, st.font_size, st, "leaf-label");
        }
        out.push_str("</g>\n");
    }
    for panel in &plot.profiles {
        let _ = writeln!(out, r#"<g class="profile">"#);
        label(&mut out, &panel.header, st.font_size, st, "class-header");
        for a in &panel.axis {
            line(&mut out, a, st, "axis");
        }
        for t in &panel.ticks {
            label(&mut out, t, st.small_font_size, st, "tick");
        }
        for b in &panel.bars {
            let _ = writeln!(
                out,
                r#"<rect class="bar" x="{}" y="{}" width="{}" height="{}" fill="{}"><title>{}</title></rect>"#,
                b.x,
                b.y,
                b.width,
                b.height,
                b.color,
                escape(&b.tooltip)
            );
            line(&mut out, &b.error_bar, st, "error-bar");
        }
        out.push_str("</g>\n");
    }
    for l in &plot.legend {
        let _ = writeln!(
            out,
            r#"<rect class="legend-swatch" x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
            l.x, l.y, l.size, l.size, l.color
        );
        label(&mut out, &l.label, st.small_font_size, st, "legend-label");
    }
    out.push_str("</svg>\n");
    out
}
