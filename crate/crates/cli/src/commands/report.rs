use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::output::{stamped_hash, DirLock, RESOLVED_CONFIG};

pub const REPORT_FILE: &str = "report.html";

const SECTIONS: [(&str, &str); 6] = [
    ("train", "Training"),
    ("rays", "Ψ along radial rays"),
    ("subspace", "Random two-dimensional slice"),
    ("spectrum", "Hessian spectrum"),
    ("bounds", "Envelope and closed-form bounds"),
    ("pacbayes", "PAC-Bayes bound and Ψ against perplexity"),
];

const CSV_PREVIEW_ROWS: usize = 12;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn sorted_files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|it| {
            it.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn csv_table(path: &Path) -> CliResult<String> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut html = String::from("<table>\n<tr>");
    for h in r.headers()? {
        let _ = write!(html, "<th>{}</th>", escape(h));
    }
    html.push_str("</tr>\n");
    let mut total = 0usize;
    for rec in r.records() {
        let rec = rec?;
        total += 1;
        if total <= CSV_PREVIEW_ROWS {
            html.push_str("<tr>");
            for f in rec.iter() {
                let _ = write!(html, "<td>{}</td>", escape(f));
            }
            html.push_str("</tr>\n");
        }
    }
    html.push_str("</table>\n");
    if total > CSV_PREVIEW_ROWS {
        let _ = writeln!(html, "<p class=\"note\">first {CSV_PREVIEW_ROWS} of {total} rows</p>");
    }
    Ok(html)
}

fn section(dir: &Path, title: &str) -> CliResult<Option<String>> {
    let (csvs, jsons, svgs) = (sorted_files(dir, "csv"), sorted_files(dir, "json"), sorted_files(dir, "svg"));
    if csvs.is_empty() && jsons.is_empty() && svgs.is_empty() {
        return Ok(None);
    }
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut html = format!("<section>\n<h2>{}</h2>\n", escape(title));
    if let Some(h) = stamped_hash(&dir.join(RESOLVED_CONFIG)) {
        let _ = writeln!(html, "<p class=\"note\">config hash <code>{h}</code></p>");
    }
    for p in &svgs {
        let svg = fs::read_to_string(p)?;
        let _ = writeln!(html, "<figure>\n{svg}\n<figcaption>{}</figcaption>\n</figure>", escape(&name(p)));
    }
    for p in &jsons {
        let text = fs::read_to_string(p)?;
        let _ = writeln!(
            html,
            "<details><summary>{}</summary>\n<pre>{}</pre>\n</details>",
            escape(&name(p)),
            escape(&text)
        );
    }
    for p in &csvs {
        let _ = writeln!(html, "<h3>{}</h3>\n{}", escape(&name(p)), csv_table(p)?);
    }
    html.push_str("</section>\n");
    Ok(Some(html))
}

/// Collects every command's outputs under `root` into one HTML page.
pub fn cmd_report(root: &Path) -> CliResult<PathBuf> {
    if !root.is_dir() {
        return Err(CliError::runtime(format!("{} is not a directory", root.display())));
    }
    let _lock = DirLock::acquire(root)?;
    let mut body = String::new();
    for (dir, title) in SECTIONS {
        if let Some(s) = section(&root.join(dir), title)? {
            body.push_str(&s);
        }
    }
    if body.is_empty() {
        return Err(CliError::runtime(format!(
            "no results under {}; run train, rays, spectrum, subspace, bounds or pacbayes first",
            root.display()
        )));
    }
    let html = format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>villani report</title>\n<style>\n\
         body {{ font-family: sans-serif; max-width: 960px; margin: 2em auto; }}\n\
         table {{ border-collapse: collapse; font-size: 12px; }}\n\
         td, th {{ border: 1px solid #ccc; padding: 2px 6px; }}\n\
         .note {{ color: #666; font-size: 13px; }}\n\
         </style>\n</head>\n<body>\n<h1>villani report</h1>\n{body}</body>\n</html>\n"
    );
    let path = root.join(REPORT_FILE);
    fs::write(&path, html)?;
    Ok(path)
}
