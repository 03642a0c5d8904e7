import init, { lift_demo, plc_explore, dtw_demo } from "./pkg/signforge_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function call(fn, ...args) {
  const v = JSON.parse(fn(...args));
  if (v.error) throw new Error(v.error);
  return v;
}

function fit(points, w, h, pad = 20) {
  const xs = points.map((p) => p[0]), ys = points.map((p) => p[1]);
  const [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  const s = Math.min((w - 2 * pad) / (x1 - x0 || 1), (h - 2 * pad) / (y1 - y0 || 1));
  return ([x, y]) => [pad + (x - x0) * s, pad + (y - y0) * s];
}

function drawSkeleton(canvas, joints, bones, all) {
  const g = canvas.getContext("2d");
  g.clearRect(0, 0, canvas.width, canvas.height);
  const map = fit(all, canvas.width, canvas.height);
  g.strokeStyle = "#345";
  g.lineWidth = 2;
  for (const [p, c] of bones) {
    const [a, b] = [map(joints[p]), map(joints[c])];
    g.beginPath();
    g.moveTo(a[0], a[1]);
    g.lineTo(b[0], b[1]);
    g.stroke();
  }
  g.fillStyle = "#c33";
  for (const j of joints) {
    const [x, y] = map(j);
    g.fillRect(x - 2, y - 2, 4, 4);
  }
}

let lift = null;

function project(frame, yaw) {
  const [c, s] = [Math.cos(yaw), Math.sin(yaw)];
  return frame.map(([x, y, z]) => [c * x + s * z, y]);
}

function showLift() {
  if (!lift) return;
  const t = Math.min(num("lift-t"), lift.frames_2d.length - 1);
  const yaw = (num("lift-yaw") * Math.PI) / 180;
  drawSkeleton($("lift-2d"), lift.frames_2d[t], lift.bones, lift.frames_2d.flat());
  const all3 = lift.frames_3d.flatMap((f) => project(f, yaw));
  drawSkeleton($("lift-3d"), project(lift.frames_3d[t], yaw), lift.bones, all3);
}

function runLift() {
  try {
    lift = call(lift_demo, num("lift-seed"), num("lift-frames"), num("lift-pct"), num("lift-sigma"));
    $("lift-t").max = lift.frames_2d.length - 1;
    showLift();
  } catch (e) {
    alert(e.message);
  }
}

function runPlc() {
  $("plc-eta-value").textContent = $("plc-eta").value;
  const g = $("plc-chart").getContext("2d");
  const [w, h] = [g.canvas.width, g.canvas.height];
  g.clearRect(0, 0, w, h);
  let v;
  try {
    v = call(plc_explore, $("plc-rewards").value, num("plc-eta"), num("plc-draws"), 7);
  } catch (e) {
    $("plc-out").textContent = e.message;
    return;
  }
  const n = v.probabilities.length;
  const total = v.counts.reduce((a, b) => a + b, 0) || 1;
  const bw = w / n;
  v.probabilities.forEach((p, i) => {
    g.fillStyle = "#8ab";
    g.fillRect(i * bw + 4, h - p * (h - 10), bw / 2 - 4, p * (h - 10));
    const q = v.counts[i] / total;
    g.fillStyle = "#e94";
    g.fillRect(i * bw + bw / 2, h - q * (h - 10), bw / 2 - 4, q * (h - 10));
  });
  $("plc-out").textContent =
    "P     " + v.probabilities.map((p) => p.toFixed(4)).join("  ") +
    "\nfreq  " + v.counts.map((c) => (c / total).toFixed(4)).join("  ");
}

function runDtw() {
  let v;
  try {
    v = call(dtw_demo, num("dtw-seed"), num("dtw-a"), num("dtw-b"));
  } catch (e) {
    $("dtw-out").textContent = e.message;
    return;
  }
  const g = $("dtw-heat").getContext("2d");
  const [n, m] = [v.local.length, v.local[0].length];
  const [cw, ch] = [g.canvas.width / m, g.canvas.height / n];
  const max = Math.max(...v.local.flat()) || 1;
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < m; j++) {
      const shade = Math.round(255 * (1 - v.local[i][j] / max));
      g.fillStyle = `rgb(${shade},${shade},255)`;
      g.fillRect(j * cw, i * ch, Math.ceil(cw), Math.ceil(ch));
    }
  }
  g.fillStyle = "#d22";
  for (const [i, j] of v.path) g.fillRect(j * cw + cw / 4, i * ch + ch / 4, cw / 2, ch / 2);
  $("dtw-out").textContent = `a: ${v.a}\nb: ${v.b}\ncost: ${v.cost.toFixed(5)}  path length: ${v.path.length}`;
}

await init();
$("lift-run").onclick = runLift;
$("lift-t").oninput = showLift;
$("lift-yaw").oninput = showLift;
for (const id of ["plc-rewards", "plc-eta", "plc-draws"]) $(id).oninput = runPlc;
$("dtw-run").onclick = runDtw;
runLift();
runPlc();
runDtw();
