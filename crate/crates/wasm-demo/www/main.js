import init, { degrees_of_freedom, rejection_rates, fit_csv } from "./pkg/crobust_wasm.js";

const fmt = (x, digits = 4) =>
  x === null || x === undefined ? "–" : Number.isInteger(x) ? String(x) : x.toPrecision(digits);

function table(headers, rows, rowClass = () => "") {
  const head = headers.map((h) => `<th>${h}</th>`).join("");
  const body = rows
    .map((r) => `<tr class="${rowClass(r)}">${r.cells.map((c) => `<td>${c}</td>`).join("")}</tr>`)
    .join("");
  return `<table><thead><tr>${head}</tr></thead><tbody>${body}</tbody></table>`;
}

function wire(id, handler) {
  const section = document.getElementById(id);
  const form = section.querySelector("form");
  const out = section.querySelector(".out");
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const values = Object.fromEntries(new FormData(form));
    out.textContent = "working…";
    // let the status render before the synchronous call
    setTimeout(() => {
      try {
        out.innerHTML = handler(values);
      } catch (err) {
        out.innerHTML = `<p class="error">${err.message ?? err}</p>`;
      }
    }, 0);
  });
}

function dfView(v) {
  const r = JSON.parse(degrees_of_freedom(+v.design, +v.m, +v.n));
  const groups = r.groups
    .map((g) => `${g.clusters} clusters with units (${g.units.join(", ")})`)
    .join("; ");
  const rows = r.rows.map((row) => ({
    low: row.aht_denominator_df !== null && row.aht_denominator_df < 4,
    cells: [row.hypothesis, row.q, fmt(row.eta), fmt(row.aht_denominator_df), row.standard_df, row.error ?? ""],
  }));
  return (
    `<p>Allocation: ${groups}</p>` +
    table(["hypothesis", "q", "η", "AHT df", "standard df", "note"], rows, (x) => (x.low ? "low" : ""))
  );
}

function simView(v) {
  const t0 = performance.now();
  const rows = JSON.parse(
    rejection_rates(+v.design, +v.m, +v.n, +v.tau2, +v.rho, +v.sigma_delta2, +v.reps, BigInt(v.seed), +v.alpha)
  );
  const secs = ((performance.now() - t0) / 1000).toFixed(1);
  const body = rows.map((r) => ({
    cells: [r.hypothesis, r.q, r.method, fmt(r.reject_rate, 3), fmt(r.mc_se, 2), r.failures],
  }));
  return `<p>${v.reps} replicates in ${secs} s.</p>` + table(["hypothesis", "q", "method", "rate", "MC SE", "failures"], body);
}

function fitView(v) {
  const r = JSON.parse(fit_csv(v.csv, v.outcome, v.covariates, v.cluster, v.within, v.vcov));
  const rows = r.coefficients.map((c) => ({
    cells: [c.name, fmt(c.estimate), fmt(c.std_error), fmt(c.t_stat), fmt(c.df), fmt(c.p_value)],
  }));
  return (
    `<p>${r.observations} observations in ${r.clusters} clusters, ${r.vcov} standard errors.</p>` +
    table(["coefficient", "estimate", "SE", "t", "df", "p"], rows)
  );
}

await init();
wire("df", dfView);
wire("sim", simView);
wire("fit", fitView);
