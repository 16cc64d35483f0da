import init, { traceBlock, clusterChannels, sparsityCurve } from "./pkg/sense_web.js";

const $ = (id) => document.getElementById(id);
const fmt = (v, d = 3) => (v === null || v === undefined ? "n/a" : Number(v).toFixed(d));

function table(head, rows) {
  const th = head.map((h) => `<th>${h}</th>`).join("");
  const tr = rows.map((r) => `<tr>${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table><tr>${th}</tr>${tr}</table>`;
}

function guarded(out, f) {
  try {
    $(out).innerHTML = f();
  } catch (e) {
    $(out).innerHTML = `<p class="err">${e}</p>`;
  }
}

function showTrace() {
  guarded("trace-out", () => {
    const t = JSON.parse(traceBlock($("ifm").value, $("kernel").value, Number($("stride").value)));
    const psum = [];
    for (let r = 0; r < t.h_out; r++) psum.push(t.psum.slice(r * t.w_out, (r + 1) * t.w_out));
    return (
      `<p>${t.events.length} MACs issued, ${t.invalid} without a valid output, ` +
      `${t.dense_cycles} dense cycles, speedup ${fmt(t.speedup, 2)}x, ` +
      `${t.matches_oracle ? "matches" : "differs from"} the dense reference.</p>` +
      table(["cycle", "ifm", "weight", "psum addr"],
        t.events.map((e) => [e.cycle, e.i_val, e.w_val, e.addr ?? "invalid"])) +
      table(psum[0].map((_, c) => `col ${c}`), psum)
    );
  });
}

function showCluster() {
  guarded("cluster-out", () => {
    const c = JSON.parse(clusterChannels($("counts").value, Number($("group").value)));
    const groups = (gs) => gs.map((g) => `[${g.map((i) => c.counts[i]).join(" ")}]`).join(" ");
    return (
      `<p>In order: ${groups(c.unclustered_groups)} costs ${c.unclustered_cycles} steps.</p>` +
      `<p>Clustered: ${groups(c.clustered_groups)} costs ${c.clustered_cycles} steps ` +
      `(${fmt(c.speedup, 2)}x).</p>`
    );
  });
}

function showCurve() {
  $("curve-out").textContent = "running...";
  setTimeout(() =>
    guarded("curve-out", () => {
      const pts = JSON.parse(sparsityCurve($("axis").value, Number($("points").value)));
      const top = Math.max(...pts.map((p) => p.speedup ?? 0), 1);
      return table(["sparsity", "speedup", "", "energy saving", "PE utilization"],
        pts.map((p) => [
          fmt(p.sparsity, 2),
          fmt(p.speedup, 2),
          `<div class="bar" style="width:${(200 * (p.speedup ?? 0)) / top}px"></div>`,
          fmt(p.energy_saving, 2),
          fmt(p.u_pe, 3),
        ]));
    }), 0);
}

await init();
$("run-trace").onclick = showTrace;
$("run-cluster").onclick = showCluster;
$("run-curve").onclick = showCurve;
showTrace();
showCluster();
