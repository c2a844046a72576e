// Expects the wasm-bindgen output (`--target web`) in ./pkg.
import init, { support_curve, compare_estimators, lasso_path } from "./pkg/paygap_demo.js";

const $ = (id) => document.getElementById(id);

function sample() {
  return [$("sector").value, Number($("n").value), Number($("seed").value)];
}

function run(f) {
  $("status").textContent = "running...";
  // let the status paint before the synchronous call
  setTimeout(() => {
    try {
      f();
      $("status").textContent = "";
    } catch (e) {
      $("status").textContent = String(e.message || e);
    }
  }, 10);
}

// Line chart: series = [{ values, color, label }], x = 0..len-1.
function plot(canvas, xs, series, xlabels) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, pad = 45;
  ctx.clearRect(0, 0, W, H);
  const all = series.flatMap((s) => s.values).filter((v) => v !== null && isFinite(v));
  let lo = Math.min(0, ...all), hi = Math.max(0, ...all);
  if (hi === lo) hi = lo + 1;
  const px = (i) => pad + (i / Math.max(1, xs.length - 1)) * (W - 2 * pad);
  const py = (v) => H - pad - ((v - lo) / (hi - lo)) * (H - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, py(0));
  ctx.lineTo(W - pad, py(0));
  ctx.stroke();
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText(hi.toFixed(3), 2, py(hi) + 4);
  ctx.fillText(lo.toFixed(3), 2, py(lo) + 4);
  xs.forEach((_, i) => {
    if (xlabels[i]) ctx.fillText(xlabels[i], px(i) - 10, H - pad + 16);
  });
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color;
    ctx.fillStyle = s.color;
    ctx.beginPath();
    let started = false;
    s.values.forEach((v, i) => {
      if (v === null) return;
      if (started) ctx.lineTo(px(i), py(v));
      else ctx.moveTo(px(i), py(v));
      started = true;
    });
    ctx.stroke();
    ctx.fillText(s.label, W - pad - 150, pad + 14 * k);
  });
}

$("run-support").onclick = () =>
  run(() => {
    const r = JSON.parse(support_curve(...sample()));
    const labels = r.steps.map((s) => "S" + s.step + " " + s.block);
    plot($("support-plot"), r.steps, [
      { values: r.steps.map((s) => s.unexplained), color: "#c0392b", label: "unexplained (EXM)" },
      { values: r.steps.map((s) => s.gap_on_support), color: "#2c3e50", label: "raw gap on support" },
      { values: r.steps.map((s) => s.share_focal - 1), color: "#27ae60", label: "focal share on support - 1" },
      { values: r.steps.map(() => r.truth.unexplained), color: "#aaa", label: "configured unexplained" },
    ], labels);
  });

$("run-compare").onclick = () =>
  run(() => {
    const r = JSON.parse(compare_estimators(...sample(), Number($("support").value)));
    const t = $("compare-table");
    const fmt = (v) => (v === null || v === undefined ? "NA" : v.toFixed(4));
    let html = `<tr><th>estimator</th><th>regime</th><th>gap</th><th>percent</th></tr>`;
    for (const row of r.rows) {
      html += row.error
        ? `<tr><td>${row.estimator}</td><td>${row.regime}</td><td colspan="2">${row.error}</td></tr>`
        : `<tr><td>${row.estimator}</td><td>${row.regime}</td><td>${fmt(row.delta)}</td><td>${fmt(row.percent)}</td></tr>`;
    }
    html += `<tr><td colspan="2">configured</td><td>${fmt(r.truth.unexplained)}</td><td></td></tr>`;
    t.innerHTML = html;
  });

$("run-lasso").onclick = () =>
  run(() => {
    const r = JSON.parse(lasso_path(...sample(), $("model").value));
    const labels = r.lambda.map((_, i) => (i === r.idx_1se ? "1se" : i === r.idx_min ? "min" : ""));
    const top = Math.max(...r.cv_mean.filter((v) => v !== null));
    plot($("lasso-plot"), r.lambda, [
      { values: r.cv_mean.map((v) => v / top), color: "#c0392b", label: "CV error (scaled)" },
      { values: r.selected.map((k) => k / r.candidates), color: "#2c3e50", label: "share selected" },
    ], labels);
    $("lasso-note").textContent = `${r.chosen.length} of ${r.candidates} columns at lambda_1se: ${r.chosen.join(", ")}`;
  });

await init();
