import init, { simulateRelay, convergenceStudy, checkGradient, problemNames } from "./pkg/slidoc_browser_demo.js";

const $ = (id) => document.getElementById(id);
const fmt = (x) => (x === null || x === undefined ? "" : Number(x).toExponential(3));

function fail(el, err) {
  el.innerHTML = "";
  const pre = document.createElement("pre");
  pre.className = "err";
  pre.textContent = String(err?.message ?? err);
  el.appendChild(pre);
}

function table(headers, rows) {
  const t = document.createElement("table");
  t.innerHTML = "<tr>" + headers.map((h) => `<th>${h}</th>`).join("") + "</tr>";
  for (const r of rows) {
    const tr = document.createElement("tr");
    for (const cell of r.cells) {
      const td = document.createElement("td");
      td.textContent = cell;
      tr.appendChild(td);
    }
    if (r.flag) tr.className = "flag";
    t.appendChild(tr);
  }
  return t;
}

function plotRelay(run) {
  const cv = $("relay-plot");
  const ctx = cv.getContext("2d");
  const W = cv.width, H = cv.height, pad = 30;
  ctx.clearRect(0, 0, W, H);
  const ys = run.x1.concat(run.x2);
  const lo = Math.min(...ys, 0), hi = Math.max(...ys, 0);
  const t0 = run.t[0], t1 = run.t[run.t.length - 1];
  const px = (t) => pad + ((t - t0) / (t1 - t0)) * (W - 2 * pad);
  const py = (y) => H - pad - ((y - lo) / (hi - lo || 1)) * (H - 2 * pad);

  ctx.strokeStyle = "#bbb";
  ctx.beginPath();
  ctx.moveTo(pad, py(0));
  ctx.lineTo(W - pad, py(0));
  ctx.stroke();

  for (const tt of run.transitions) {
    ctx.strokeStyle = "#e0a040";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(px(tt), pad);
    ctx.lineTo(px(tt), H - pad);
    ctx.stroke();
    ctx.setLineDash([]);
  }

  const line = (vals, color) => {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    vals.forEach((v, i) => (i ? ctx.lineTo(px(run.t[i]), py(v)) : ctx.moveTo(px(run.t[i]), py(v))));
    ctx.stroke();
    ctx.lineWidth = 1;
  };
  line(run.x1, "#1f6fb4");
  line(run.x2, "#c0392b");

  ctx.fillStyle = "#333";
  ctx.fillText("x1", W - pad + 4, py(run.x1[run.x1.length - 1]));
  ctx.fillText("x2", W - pad + 4, py(run.x2[run.x2.length - 1]));
}

function runRelay() {
  const u = Number($("relay-u").value);
  $("relay-u-val").textContent = u.toFixed(2);
  try {
    const run = JSON.parse(simulateRelay(u, Number($("relay-delta").value), Number($("relay-k").value)));
    plotRelay(run);
    const slid = run.sliding.filter(Boolean).length;
    $("relay-info").textContent =
      `crossing at t = ${run.transitions.map((t) => t.toFixed(6)).join(", ") || "none"}; ` +
      `${slid} of ${run.t.length} nodes sliding; cost ${fmt(run.cost)}`;
  } catch (e) {
    fail($("relay-info"), e);
  }
}

function runOrders() {
  const out = $("order-out");
  try {
    const r = JSON.parse(convergenceStudy($("order-q").value, Number($("order-h0").value), Number($("order-levels").value)));
    out.innerHTML = "";
    const rows = r.h.map((h, i) => ({ cells: [h.toPrecision(4), fmt(r.errors[i]), i ? r.pairwise_orders[i - 1].toFixed(3) : ""] }));
    out.appendChild(table(["h", "error", "order"], rows));
    const p = document.createElement("p");
    p.textContent = `fitted slope ${r.slope.toFixed(3)}`;
    out.appendChild(p);
  } catch (e) {
    fail(out, e);
  }
}

function runCheck() {
  const out = $("check-out");
  try {
    const r = JSON.parse(checkGradient($("check-problem").value, Number($("check-eps").value)));
    out.innerHTML = "";
    const rows = r.adjoint.map((g, i) => ({
      cells: [i, fmt(g), fmt(r.fd[i]), r.structure_change[i] ? "structure change" : ""],
      flag: r.structure_change[i],
    }));
    out.appendChild(table(["entry", "adjoint", "finite difference", ""], rows));
    const p = document.createElement("p");
    p.textContent = `max relative error ${fmt(r.max_relative_error)}`;
    out.appendChild(p);
  } catch (e) {
    fail(out, e);
  }
}

await init();
for (const name of JSON.parse(problemNames())) {
  const opt = document.createElement("option");
  opt.textContent = name;
  $("check-problem").appendChild(opt);
}
for (const id of ["relay-u", "relay-delta", "relay-k"]) $(id).addEventListener("input", runRelay);
$("order-run").addEventListener("click", runOrders);
$("check-run").addEventListener("click", runCheck);
runRelay();
