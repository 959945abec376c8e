import init, { fit_curve, simulate_histogram, proof_terms } from "./pkg/ortho_web.js";

const $ = (id) => document.getElementById(id);
const settings = () => ({
  n: Number($("n").value),
  learner: $("learner").value,
  scale: Number($("scale").value),
  seed: BigInt($("seed").value),
});

function run(target, f) {
  $(target).classList.remove("error");
  try {
    f();
  } catch (e) {
    $(target).textContent = String(e);
    $(target).classList.add("error");
  }
}

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
}

// Maps data ranges onto the canvas with a small margin.
function scaler(lo, hi, size, flip) {
  const pad = 0.05 * (hi - lo || 1);
  const a = lo - pad;
  const b = hi + pad;
  return (v) => (flip ? size - ((v - a) / (b - a)) * size : ((v - a) / (b - a)) * size);
}

function drawCurve(d) {
  const c = $("curve");
  const ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const half = c.width / 2;
  for (const k of [0, 1]) {
    const ys = d.sample.map((p) => p[1 + k]).concat(d.truth.map((p) => p[k]));
    const sy = scaler(Math.min(...ys), Math.max(...ys), c.height, true);
    const sx = (x) => k * half + ((x + 1) / 2) * (half - 10) + 5;
    ctx.fillStyle = "rgba(0,0,0,0.15)";
    for (const p of d.sample) ctx.fillRect(sx(p[0]), sy(p[1 + k]), 2, 2);
    for (const [series, color] of [[d.truth, "#2a7"], [d.fitted, "#c33"]]) {
      ctx.strokeStyle = color;
      ctx.lineWidth = 2;
      ctx.beginPath();
      d.x.forEach((x, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, sx(x), sy(series[i][k])));
      ctx.stroke();
    }
  }
  $("curve-info").textContent = `left: E[Y|X], right: E[W|X]; green truth, red fit\n${d.hyperparameters}`;
}

function normalPdf(z) {
  return Math.exp(-0.5 * z * z) / Math.sqrt(2 * Math.PI);
}

function drawHistogram(d) {
  const c = $("histogram");
  const ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const bins = 30;
  const lo = -4;
  const width = 8 / bins;
  const counts = new Array(bins).fill(0);
  for (const z of d.standardized) {
    const b = Math.floor((z - lo) / width);
    if (b >= 0 && b < bins) counts[b] += 1;
  }
  const total = Math.max(d.standardized.length, 1);
  const dens = counts.map((k) => k / (total * width));
  const top = Math.max(0.45, ...dens);
  const sx = (z) => ((z - lo) / 8) * c.width;
  const sy = (v) => c.height - (v / top) * (c.height - 10);
  ctx.fillStyle = "#8ab";
  dens.forEach((v, i) => ctx.fillRect(sx(lo + i * width) + 1, sy(v), c.width / bins - 2, c.height - sy(v)));
  ctx.strokeStyle = "#c33";
  ctx.lineWidth = 2;
  ctx.beginPath();
  for (let i = 0; i <= 200; i++) {
    const z = lo + (8 * i) / 200;
    (i ? ctx.lineTo : ctx.moveTo).call(ctx, sx(z), sy(normalPdf(z)));
  }
  ctx.stroke();
  const ks = d.ks_stat === null ? "n/a (fewer than 200 values)" : d.ks_stat.toFixed(4);
  $("hist-info").textContent =
    `coverage ${d.coverage.toFixed(3)}  bias ${d.bias.toFixed(4)}  sd ${d.sd.toFixed(4)}\n` +
    `mean |D| ${d.mean_d_abs.toFixed(4)}  KS ${ks}  excluded ${d.excluded}`;
}

function showTerms(rows) {
  const f = (v) => v.toFixed(5).padStart(10);
  const lines = ["moment        θ̂          se          B          C          D          E    E bound"];
  for (const r of rows) {
    lines.push(
      r.moment.padEnd(10) + [r.theta_hat, r.se, r.b, r.c, r.d, r.e, r.e_bound].map(f).join(" "),
    );
  }
  $("terms-info").textContent = lines.join("\n");
}

await init();
$("status").textContent = "ready";

$("fit").onclick = () =>
  run("curve-info", () => {
    const s = settings();
    drawCurve(JSON.parse(fit_curve(s.n, s.learner, s.scale, s.seed)));
  });

$("hist").onclick = () =>
  run("hist-info", () => {
    const s = settings();
    const reps = Number($("reps").value);
    drawHistogram(JSON.parse(simulate_histogram(s.n, reps, $("moment").value, s.learner, s.scale, s.seed)));
  });

$("terms").onclick = () =>
  run("terms-info", () => {
    const s = settings();
    showTerms(JSON.parse(proof_terms(s.n, s.learner, s.scale, s.seed)));
  });
