// Copyright 2026 The tb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Static SVG figures from the CSV files written by `evaluate`,
//! `apc-bench` and `train`. The input kind is detected from its header.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};

const SIZE: (u32, u32) = (800, 500);

struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> =
            r.headers().map_err(|e| Error::format(path, 1, e.to_string()))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(path, i + 2, e.to_string()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if header.iter().all(String::is_empty) || rows.is_empty() {
            return Err(Error::format(path, 1, "CSV has no data rows"));
        }
        Ok(Table { path: path.to_path_buf(), header, rows })
    }

    fn has(&self, cols: &[&str]) -> bool {
        cols.iter().all(|c| self.header.iter().any(|h| h == c))
    }

    fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).expect("column checked by has()")
    }

    fn text(&self, row: usize, name: &str) -> &str {
        &self.rows[row][self.col(name)]
    }

    fn num(&self, row: usize, name: &str) -> Result<f64> {
        let s = self.text(row, name);
        s.parse().map_err(|_| Error::format(&self.path, row + 2, format!("{name}: '{s}' is not a number")))
    }

    fn stem(&self) -> String {
        self.path.file_stem().map_or_else(|| "report".to_string(), |s| s.to_string_lossy().into_owned())
    }
}

fn draw_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error {
    let path = path.to_path_buf();
    move |e| Error::Runtime(format!("{}: {e}", path.display()))
}

/// Renders every input and returns the written figure paths.
pub fn render(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::Config("report.inputs is empty".into()));
    }
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let mut written = Vec::new();
    for p in inputs {
        let t = Table::read(p)?;
        if t.has(&["env", "policy", "metric", "mean", "std"]) {
            written.extend(grouped_bars(&t, out_dir)?);
        } else if t.has(&["p", "peak", "mode", "mean_delay_ms", "mape"]) {
            written.push(delay_lines(&t, out_dir, "mean_delay_ms", "mean delay (ms)")?);
            written.push(delay_lines(&t, out_dir, "mape", "MAPE")?);
        } else if t.has(&["epoch", "loss"]) {
            written.push(loss_curve(&t, out_dir)?);
        } else {
            return Err(Error::format(p, 1, format!("unrecognized columns: {}", t.header.join(","))));
        }
    }
    Ok(written)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span, hi + 0.1 * span)
}

/// One figure per metric: environments on the x axis, one bar per policy
/// with a standard-deviation whisker.
fn grouped_bars(t: &Table, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut by_metric: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in 0..t.rows.len() {
        by_metric.entry(t.text(i, "metric").to_string()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (metric, rows) in by_metric {
        let mut envs: Vec<&str> = Vec::new();
        let mut policies: Vec<&str> = Vec::new();
        for &i in &rows {
            let (e, p) = (t.text(i, "env"), t.text(i, "policy"));
            if !envs.contains(&e) {
                envs.push(e);
            }
            if !policies.contains(&p) {
                policies.push(p);
            }
        }
        let mut bars = Vec::new();
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for &i in &rows {
            let (m, s) = (t.num(i, "mean")?, t.num(i, "std")?);
            lo = lo.min(m - s);
            hi = hi.max(m + s);
            let e = envs.iter().position(|x| *x == t.text(i, "env")).unwrap_or(0);
            let p = policies.iter().position(|x| *x == t.text(i, "policy")).unwrap_or(0);
            bars.push((e, p, m, s));
        }
        let (lo, hi) = padded(lo, hi);
        let group = policies.len() as f64 + 1.0;
        let path = out_dir.join(format!("{}_{metric}.svg", t.stem()));
        let err = draw_err(&path);
        {
            let root = SVGBackend::new(&path, SIZE).into_drawing_area();
            root.fill(&WHITE).map_err(&err)?;
            let mut chart = ChartBuilder::on(&root)
                .caption(&metric, ("sans-serif", 22))
                .margin(12)
                .x_label_area_size(40)
                .y_label_area_size(60)
                .build_cartesian_2d(0.0..group * envs.len() as f64, lo..hi)
                .map_err(&err)?;
            chart.configure_mesh().disable_x_mesh().x_labels(0).y_desc(metric.as_str()).draw().map_err(&err)?;
            for (pi, policy) in policies.iter().enumerate() {
                let color = Palette99::pick(pi).to_rgba();
                let mine: Vec<_> = bars.iter().filter(|b| b.1 == pi).collect();
                chart
                    .draw_series(mine.iter().map(|&&(e, p, m, _)| {
                        let x0 = e as f64 * group + p as f64 + 0.5;
                        Rectangle::new([(x0, 0.0), (x0 + 1.0, m)], color.filled())
                    }))
                    .map_err(&err)?
                    .label(*policy)
                    .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
                chart
                    .draw_series(mine.iter().map(|&&(e, p, m, s)| {
                        let x = e as f64 * group + p as f64 + 1.0;
                        PathElement::new(vec![(x, m - s), (x, m + s)], BLACK)
                    }))
                    .map_err(&err)?;
            }
            chart
                .draw_series(envs.iter().enumerate().map(|(e, name)| {
                    let x = e as f64 * group + group / 2.0;
                    Text::new(name.to_string(), (x, lo), ("sans-serif", 14).into_font().color(&BLACK))
                }))
                .map_err(&err)?;
            chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(&err)?;
            root.present().map_err(&err)?;
        }
        out.push(path);
    }
    Ok(out)
}

/// `column` against peak request count, one line per `(p, mode)`, averaged
/// over seeds.
fn delay_lines(t: &Table, out_dir: &Path, column: &str, label: &str) -> Result<PathBuf> {
    let mut series: BTreeMap<(String, String), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for i in 0..t.rows.len() {
        let peak = t.num(i, "peak")? as u64;
        let key = (t.text(i, "p").to_string(), t.text(i, "mode").to_string());
        series.entry(key).or_default().entry(peak).or_default().push(t.num(i, column)?);
    }
    let lines: Vec<(String, Vec<(f64, f64)>)> = series
        .into_iter()
        .map(|((p, mode), pts)| {
            let pts = pts.into_iter().map(|(x, v)| (x as f64, v.iter().sum::<f64>() / v.len() as f64)).collect();
            (format!("p={p} {mode} scheduler"), pts)
        })
        .collect();
    let xs = lines.iter().flat_map(|l| l.1.iter().map(|p| p.0));
    let ys = lines.iter().flat_map(|l| l.1.iter().map(|p| p.1));
    let (x0, x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = padded(0.0f64.min(ys.clone().fold(f64::INFINITY, f64::min)), ys.fold(f64::NEG_INFINITY, f64::max));
    let path = out_dir.join(format!("{}_{column}.svg", t.stem()));
    let err = draw_err(&path);
    {
        let root = SVGBackend::new(&path, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(&err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{label} vs peak requests"), ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(padded(x0, x1).0..padded(x0, x1).1, y0..y1)
            .map_err(&err)?;
        chart.configure_mesh().x_desc("peak requests").y_desc(label).draw().map_err(&err)?;
        for (i, (name, pts)) in lines.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
                .map_err(&err)?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 14, y)], color.stroke_width(2)));
            chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(&err)?;
        }
        chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(&err)?;
        root.present().map_err(&err)?;
    }
    Ok(path)
}

fn loss_curve(t: &Table, out_dir: &Path) -> Result<PathBuf> {
    let pts = (0..t.rows.len()).map(|i| Ok((t.num(i, "epoch")?, t.num(i, "loss")?))).collect::<Result<Vec<_>>>()?;
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let path = out_dir.join(format!("{}_loss.svg", t.stem()));
    let err = draw_err(&path);
    {
        let root = SVGBackend::new(&path, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(&err)?;
        let (y0, y1) = padded(y0, y1);
        let mut chart = ChartBuilder::on(&root)
            .caption("training loss", ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1.max(x0 + 1.0), y0..y1)
            .map_err(&err)?;
        chart.configure_mesh().x_desc("epoch").y_desc("loss").draw().map_err(&err)?;
        chart.draw_series(LineSeries::new(pts, BLUE.stroke_width(2))).map_err(&err)?;
        root.present().map_err(&err)?;
    }
    Ok(path)
}
