use super::cluster::leaf_order;
use super::svg::{
    diverging, fmt_num, quantiles, sequential, sequential_legend, Anchor, Canvas, Scale, NEGATIVE_FILL,
    NEUTRAL_FILL, POSITIVE_FILL,
};
use super::{AttributionMatrix, PlotError, PlotSpec, HISTOGRAM_BIN_WIDTH};
use crate::data::Dataset;
use crate::rng::SplitMix64;
use crate::shapley::{importance_from, Attribution};

const LEFT: f64 = 190.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 50.0;
const ROW: f64 = 28.0;
const BOTTOM: f64 = 60.0;
const JITTER_SEED: u64 = 0x5EED;

type Result<T> = std::result::Result<T, PlotError>;

fn size(spec: &PlotSpec, w: u32, h: u32) -> (u32, u32) {
    (spec.width.unwrap_or(w), spec.height.unwrap_or(h))
}

/// Feature indices by global importance (mean |φ| descending, ties by index).
fn ranking(m: &AttributionMatrix) -> Result<Vec<(usize, f64)>> {
    let imp = importance_from(&m.rows).map_err(|_| PlotError::InconsistentRows)?;
    let features = m.features();
    Ok(imp
        .into_iter()
        .map(|fi| {
            let idx = features.iter().position(|f| *f == fi.feature).expect("ranked feature exists");
            (idx, fi.importance)
        })
        .collect())
}

fn feature_rows_height(k: usize) -> u32 {
    (TOP + ROW * k as f64 + BOTTOM).ceil() as u32
}

fn feature_label(a: &Attribution, i: usize) -> String {
    format!("{} = {}", a.features[i], fmt_num(a.instance[i]))
}

pub(super) fn force(spec: &PlotSpec, a: &Attribution) -> Result<String> {
    if a.n_features() == 0 {
        return Err(PlotError::EmptyData);
    }
    let (w, h) = size(spec, 900, 230);
    let mut c = Canvas::new(w, h);
    c.title("Local explanation");

    let order = a.order_by_magnitude();
    let shown: Vec<usize> = order
        .iter()
        .copied()
        .take(spec.top_k)
        .filter(|&i| a.contributions[i] != 0.0)
        .collect();
    let rest: f64 = order.iter().skip(spec.top_k).map(|&i| a.contributions[i]).sum();
    // the rendered endpoint is base + Σφ
    let end = a.base_value + a.contributions.iter().sum::<f64>();

    let pos_total: f64 = shown.iter().map(|&i| a.contributions[i]).filter(|p| *p > 0.0).sum::<f64>()
        + rest.max(0.0);
    let neg_total: f64 = shown.iter().map(|&i| a.contributions[i]).filter(|p| *p < 0.0).sum::<f64>()
        + rest.min(0.0);
    let lo = a.base_value.min(end - pos_total).min(end);
    let hi = a.base_value.max(end - neg_total).max(end);
    let scale = Scale::padded(lo, hi, 40.0, c.width - 40.0, 0.05);

    let bar_y = 80.0;
    let bar_h = 30.0;
    let mut acc_pos = 0.0;
    let mut acc_neg = 0.0;
    let mut label_row = 0;
    for &i in &shown {
        let phi = a.contributions[i];
        let (x0, x1, class, fill) = if phi > 0.0 {
            let seg = (end - acc_pos - phi, end - acc_pos);
            acc_pos += phi;
            (seg.0, seg.1, "bar positive", POSITIVE_FILL)
        } else {
            let seg = (end - acc_neg, end - acc_neg - phi);
            acc_neg += phi;
            (seg.0, seg.1, "bar negative", NEGATIVE_FILL)
        };
        let (px0, px1) = (scale.map(x0), scale.map(x1));
        c.rect(class, px0, bar_y, px1 - px0, bar_h, fill);
        let ly = bar_y + bar_h + 16.0 + 13.0 * (label_row % 3) as f64;
        label_row += 1;
        c.text("bar-label", (px0 + px1) / 2.0, ly, Anchor::Middle, 10, &feature_label(a, i));
    }
    if rest != 0.0 {
        let (x0, x1) = if rest > 0.0 {
            (end - acc_pos - rest, end - acc_pos)
        } else {
            (end - acc_neg, end - acc_neg - rest)
        };
        let (px0, px1) = (scale.map(x0), scale.map(x1));
        c.rect("rest", px0, bar_y, px1 - px0, bar_h, NEUTRAL_FILL);
    }

    let bx = scale.map(a.base_value);
    c.line("base-marker", bx, bar_y - 12.0, bx, bar_y + bar_h + 4.0, "#555555");
    c.text("base-caption", bx, bar_y - 30.0, Anchor::Middle, 10, "base value");
    c.text("base-value", bx, bar_y - 16.0, Anchor::Middle, 11, &fmt_num(a.base_value));
    let ex = scale.map(end);
    c.line("prediction-marker", ex, bar_y - 4.0, ex, bar_y + bar_h, "#000000");
    c.text("prediction-caption", ex, bar_y - 30.0, Anchor::Middle, 10, "f(x)");
    c.text("prediction-value", ex, bar_y - 16.0, Anchor::Middle, 13, &fmt_num(end));
    c.x_axis(&scale, h as f64 - 50.0, "model output");
    Ok(c.finish())
}

pub(super) fn summary_bar(spec: &PlotSpec, m: &AttributionMatrix) -> Result<String> {
    let ranked = ranking(m)?;
    let k = spec.top_k.min(ranked.len());
    let (w, h) = size(spec, 800, feature_rows_height(k));
    let mut c = Canvas::new(w, h);
    c.title("Mean |SHAP value| per feature");
    let max = ranked.first().map_or(0.0, |r| r.1);
    let scale = Scale::new(0.0, if max > 0.0 { max } else { 1.0 }, LEFT, c.width - RIGHT);
    let names = m.features();
    for (row, &(idx, imp)) in ranked.iter().take(k).enumerate() {
        let y = TOP + row as f64 * ROW;
        c.text("feature-label", LEFT - 8.0, y + ROW * 0.6, Anchor::End, 11, &names[idx]);
        let x1 = scale.map(imp);
        c.rect("bar", LEFT, y + 4.0, x1 - LEFT, ROW - 8.0, NEGATIVE_FILL);
        c.text("value-label", x1 + 4.0, y + ROW * 0.6, Anchor::Start, 10, &fmt_num(imp));
    }
    c.x_axis(&scale, TOP + k as f64 * ROW + 6.0, "mean(|SHAP value|)");
    Ok(c.finish())
}

pub(super) fn beeswarm(spec: &PlotSpec, m: &AttributionMatrix) -> Result<String> {
    let ranked = ranking(m)?;
    let k = spec.top_k.min(ranked.len());
    let (w, h) = size(spec, 800, feature_rows_height(k));
    let mut c = Canvas::new(w, h);
    c.title("SHAP values per observation");
    let shown: Vec<usize> = ranked.iter().take(k).map(|r| r.0).collect();
    let phis = shown.iter().flat_map(|&i| m.rows.iter().map(move |a| a.contributions[i]));
    let (lo, hi) = phis.fold((0.0f64, 0.0f64), |(lo, hi), p| (lo.min(p), hi.max(p)));
    let scale = Scale::padded(lo, hi, LEFT, c.width - RIGHT - 40.0, 0.03);
    let zx = scale.map(0.0);
    c.line("zero", zx, TOP, zx, TOP + k as f64 * ROW, "#bbbbbb");
    let names = m.features();
    let mut rng = SplitMix64::new(JITTER_SEED);
    for (row, &idx) in shown.iter().enumerate() {
        let cy = TOP + (row as f64 + 0.5) * ROW;
        c.text("feature-label", LEFT - 8.0, cy + 4.0, Anchor::End, 11, &names[idx]);
        let values: Vec<f64> = m.rows.iter().map(|a| a.instance[idx]).collect();
        let q = quantiles(&values);
        for (a, qv) in m.rows.iter().zip(q) {
            let jitter = (rng.unit() - 0.5) * 0.7 * ROW;
            c.circle("dot", scale.map(a.contributions[idx]), cy + jitter, 3.0, &sequential(qv));
        }
    }
    let lx = c.width - RIGHT - 20.0;
    sequential_legend(&mut c, lx, TOP, TOP + k as f64 * ROW, "feature value");
    c.x_axis(&scale, TOP + k as f64 * ROW + 6.0, "SHAP value (impact on model output)");
    Ok(c.finish())
}

pub(super) fn dependence(spec: &PlotSpec, m: &AttributionMatrix) -> Result<String> {
    let names = m.features();
    let find = |name: &Option<String>| {
        let name = name.as_deref().unwrap_or_default();
        names
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| PlotError::UnknownFeature(name.to_string()))
    };
    let fi = find(&spec.feature)?;
    let ci = find(&spec.color_by)?;
    let (w, h) = size(spec, 800, 520);
    let mut c = Canvas::new(w, h);
    c.title(&format!("Dependence of SHAP values on {}", names[fi]));
    let xs: Vec<f64> = m.rows.iter().map(|a| a.instance[fi]).collect();
    let ys: Vec<f64> = m.rows.iter().map(|a| a.contributions[fi]).collect();
    let minmax = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let (x0, x1) = minmax(&xs);
    let (y0, y1) = minmax(&ys);
    let plot_bottom = c.height - BOTTOM;
    let sx = Scale::padded(x0, x1, 80.0, c.width - RIGHT - 50.0, 0.03);
    let sy = Scale::padded(y0, y1, plot_bottom, TOP, 0.05);
    let q = quantiles(&m.rows.iter().map(|a| a.instance[ci]).collect::<Vec<_>>());
    for ((x, y), qv) in xs.iter().zip(&ys).zip(q) {
        c.circle("dot", sx.map(*x), sy.map(*y), 3.0, &sequential(qv));
    }
    c.line("axis", 80.0, TOP, 80.0, plot_bottom, "#333333");
    for t in sy.ticks(5) {
        c.text("tick-label", 74.0, sy.map(t) + 3.0, Anchor::End, 10, &fmt_num(t));
    }
    c.text("axis-label", 20.0, TOP - 12.0, Anchor::Start, 12, &format!("SHAP value for {}", names[fi]));
    let lx = c.width - RIGHT - 30.0;
    sequential_legend(&mut c, lx, TOP, plot_bottom, &names[ci]);
    c.x_axis(&sx, plot_bottom + 6.0, &names[fi]);
    Ok(c.finish())
}

pub(super) fn decision(spec: &PlotSpec, m: &AttributionMatrix) -> Result<String> {
    let ranked = ranking(m)?;
    let n_features = ranked.len();
    let k = spec.top_k.min(n_features);
    let has_rest = n_features > k;
    // bottom-to-top: remaining features (aggregated), then the top k from least to most important
    let levels: Vec<Vec<usize>> = {
        let mut v = Vec::new();
        if has_rest {
            v.push(ranked[k..].iter().map(|r| r.0).collect());
        }
        for r in ranked[..k].iter().rev() {
            v.push(vec![r.0]);
        }
        v
    };
    let (w, h) = size(spec, 800, feature_rows_height(levels.len() + 1));
    let mut c = Canvas::new(w, h);
    c.title("Decision paths");
    let paths: Vec<Vec<f64>> = m
        .rows
        .iter()
        .map(|a| {
            let mut acc = a.base_value;
            let mut pts = vec![acc];
            for lvl in &levels {
                acc += lvl.iter().map(|&i| a.contributions[i]).sum::<f64>();
                pts.push(acc);
            }
            pts
        })
        .collect();
    let (lo, hi) = paths
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let scale = Scale::padded(lo, hi, LEFT, c.width - RIGHT, 0.03);
    let n_levels = levels.len();
    let bottom = TOP + n_levels as f64 * ROW;
    let level_y = |l: usize| bottom - l as f64 * ROW;
    let names = m.features();
    for (l, lvl) in levels.iter().enumerate() {
        let y = level_y(l + 1);
        c.line("grid", LEFT, y, c.width - RIGHT, y, "#eeeeee");
        let label = if lvl.len() == 1 {
            names[lvl[0]].clone()
        } else {
            format!("{} other features", lvl.len())
        };
        c.text("feature-label", LEFT - 8.0, y + 4.0, Anchor::End, 11, &label);
    }
    let base_x = scale.map(m.rows[0].base_value);
    c.line("base-marker", base_x, TOP, base_x, bottom, "#999999");
    let finals: Vec<f64> = paths.iter().map(|p| *p.last().expect("nonempty path")).collect();
    let q = quantiles(&finals);
    for (p, qv) in paths.iter().zip(q) {
        let pts: Vec<(f64, f64)> = p.iter().enumerate().map(|(l, &v)| (scale.map(v), level_y(l))).collect();
        c.polyline("path", &pts, &sequential(qv));
    }
    c.x_axis(&scale, bottom + 6.0, "model output");
    Ok(c.finish())
}

pub(super) fn heatmap(spec: &PlotSpec, m: &AttributionMatrix) -> Result<String> {
    let ranked = ranking(m)?;
    let k = spec.top_k.min(ranked.len());
    let shown: Vec<usize> = ranked.iter().take(k).map(|r| r.0).collect();
    let vectors: Vec<Vec<f64>> = m.rows.iter().map(|a| a.contributions.clone()).collect();
    let order = leaf_order(&vectors);
    let (w, h) = size(spec, 900, feature_rows_height(k) + 70);
    let mut c = Canvas::new(w, h);
    c.title("SHAP values by observation (clustered)");
    let strip_top = TOP;
    let strip_h = 50.0;
    let grid_top = strip_top + strip_h + 15.0;
    let x0 = LEFT;
    let x1 = c.width - RIGHT;
    let cell_w = (x1 - x0) / order.len() as f64;
    let max_abs = shown
        .iter()
        .flat_map(|&i| m.rows.iter().map(move |a| a.contributions[i].abs()))
        .fold(0.0, f64::max);

    let preds: Vec<f64> = order.iter().map(|&r| m.rows[r].prediction).collect();
    let (plo, phi) = preds.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let sy = Scale::padded(plo, phi, strip_top + strip_h, strip_top, 0.05);
    let pts: Vec<(f64, f64)> = preds
        .iter()
        .enumerate()
        .map(|(j, &p)| (x0 + (j as f64 + 0.5) * cell_w, sy.map(p)))
        .collect();
    c.polyline("output", &pts, "#000000");
    c.text("feature-label", LEFT - 8.0, strip_top + strip_h / 2.0, Anchor::End, 11, "f(x)");

    let names = m.features();
    for (row, &idx) in shown.iter().enumerate() {
        let y = grid_top + row as f64 * ROW;
        c.text("feature-label", LEFT - 8.0, y + ROW * 0.6, Anchor::End, 11, &names[idx]);
        for (j, &r) in order.iter().enumerate() {
            let phi = m.rows[r].contributions[idx];
            c.rect("cell", x0 + j as f64 * cell_w, y, cell_w, ROW, &diverging(phi, max_abs));
        }
    }
    let bottom = grid_top + k as f64 * ROW;
    c.text("axis-label", (x0 + x1) / 2.0, bottom + 20.0, Anchor::Middle, 12, "observations (clustering order)");
    c.text(
        "legend-label",
        x1 + 6.0,
        grid_top + 10.0,
        Anchor::Start,
        10,
        &format!("±{}", fmt_num(max_abs)),
    );
    Ok(c.finish())
}

pub(super) fn histogram(spec: &PlotSpec, d: &Dataset) -> Result<String> {
    let targets: Vec<f64> = d
        .rows
        .iter()
        .filter_map(|r| r.target)
        .filter(|t| t.is_finite())
        .collect();
    if targets.is_empty() {
        return Err(PlotError::EmptyData);
    }
    let (lo, hi) = targets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let bins = histogram_bins(&targets, lo, hi);
    let start = (lo / HISTOGRAM_BIN_WIDTH).floor() * HISTOGRAM_BIN_WIDTH;
    let (w, h) = size(spec, 800, 450);
    let mut c = Canvas::new(w, h);
    c.title(&format!("Distribution of {}", d.schema.target));
    let plot_bottom = c.height - BOTTOM;
    let end = start + bins.len() as f64 * HISTOGRAM_BIN_WIDTH;
    let sx = Scale::new(start, end, 70.0, c.width - 30.0);
    let max_count = *bins.iter().max().unwrap_or(&1) as f64;
    let sy = Scale::new(0.0, max_count.max(1.0), plot_bottom, TOP);
    for (i, &count) in bins.iter().enumerate() {
        let b0 = start + i as f64 * HISTOGRAM_BIN_WIDTH;
        let px0 = sx.map(b0);
        let px1 = sx.map(b0 + HISTOGRAM_BIN_WIDTH);
        let top = sy.map(count as f64);
        c.rect("bar", px0 + 0.5, top, px1 - px0 - 1.0, plot_bottom - top, NEGATIVE_FILL);
    }
    c.line("axis", 70.0, TOP, 70.0, plot_bottom, "#333333");
    for t in sy.ticks(5) {
        c.text("tick-label", 64.0, sy.map(t) + 3.0, Anchor::End, 10, &fmt_num(t));
    }
    c.text("axis-label", 20.0, TOP - 12.0, Anchor::Start, 12, "count");
    c.x_axis(&sx, plot_bottom + 2.0, &d.schema.target);
    Ok(c.finish())
}

/// Counts per bin of width 25 starting at the multiple of 25 at or below `lo`.
pub(super) fn histogram_bins(values: &[f64], lo: f64, hi: f64) -> Vec<usize> {
    let start = (lo / HISTOGRAM_BIN_WIDTH).floor() * HISTOGRAM_BIN_WIDTH;
    let n_bins = ((hi - start) / HISTOGRAM_BIN_WIDTH).floor() as usize + 1;
    let mut bins = vec![0usize; n_bins];
    for &v in values {
        let b = (((v - start) / HISTOGRAM_BIN_WIDTH).floor() as usize).min(n_bins - 1);
        bins[b] += 1;
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins() {
        assert_eq!(histogram_bins(&[10.0, 24.9, 25.0, 499.0], 10.0, 499.0).len(), 20);
        assert_eq!(histogram_bins(&[10.0, 24.9, 25.0], 10.0, 25.0), vec![2, 1]);
        assert_eq!(histogram_bins(&[50.0], 50.0, 50.0), vec![1]);
    }
}
