import init, {
  cam_scene,
  augment_preview,
  metrics_report,
  texture_names,
  label_names,
} from "./pkg/defectnet_web.js";

const SIDE = 64;
const $ = (id) => document.getElementById(id);

function paint(canvas, rgba) {
  const img = new ImageData(new Uint8ClampedArray(rgba), SIDE, SIDE);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

const cam = { x: 16, y: 16 };

function drawCam() {
  const canvas = $("cam-canvas");
  const view = cam_scene(
    cam.x, cam.y,
    Number($("cam-patch").value),
    Number($("cam-seed").value),
    Number($("cam-alpha").value),
    Number($("cam-threshold").value),
  );
  paint(canvas, view.rgba());
  const r = view.region();
  const ctx = canvas.getContext("2d");
  if (r.length === 4) {
    ctx.strokeStyle = "white";
    ctx.lineWidth = 1;
    ctx.strokeRect(r[0] + 0.5, r[1] + 0.5, r[2] - 1, r[3] - 1);
  }
  const names = ["top-left", "top-right", "bottom-left", "bottom-right"];
  $("cam-info").textContent =
    `patch in ${names[view.patch_quadrant()]}, CAM peak in ${names[view.hot_quadrant()]}` +
    (r.length === 4 ? `, region x=${r[0]} y=${r[1]} w=${r[2]} h=${r[3]}` : ", region none");
  view.free();
}

function drawAugment() {
  const view = augment_preview(
    Number($("aug-class").value),
    7,
    Number($("aug-draw").value),
    Number($("aug-rot").value),
    Number($("aug-shift").value),
    $("aug-hflip").checked,
    $("aug-vflip").checked,
  );
  paint($("aug-original"), view.original());
  paint($("aug-augmented"), view.augmented());
  view.free();
}

const PUBLISHED = [
  [157, 13, 0, 13],
  [4, 167, 0, 12],
  [0, 0, 183, 0],
  [31, 6, 1, 145],
];

function buildCounts() {
  const labels = label_names();
  const table = $("counts");
  const head = table.insertRow();
  head.insertCell().textContent = "true \\ pred";
  for (const l of labels) head.insertCell().textContent = l;
  PUBLISHED.forEach((row, i) => {
    const tr = table.insertRow();
    tr.insertCell().textContent = labels[i];
    row.forEach((v) => {
      const input = document.createElement("input");
      input.type = "number";
      input.min = "0";
      input.value = v;
      input.addEventListener("input", drawReport);
      tr.insertCell().appendChild(input);
    });
  });
}

function drawReport() {
  const counts = [...$("counts").querySelectorAll("input")].map((i) => Math.max(0, Math.floor(Number(i.value) || 0)));
  try {
    $("report").textContent = metrics_report(new Uint32Array(counts));
  } catch (e) {
    $("report").textContent = String(e);
  }
}

async function main() {
  await init();

  $("cam-canvas").addEventListener("click", (ev) => {
    const rect = ev.target.getBoundingClientRect();
    cam.x = Math.floor(((ev.clientX - rect.left) / rect.width) * SIDE);
    cam.y = Math.floor(((ev.clientY - rect.top) / rect.height) * SIDE);
    drawCam();
  });
  for (const id of ["cam-patch", "cam-alpha", "cam-threshold", "cam-seed"]) $(id).addEventListener("input", drawCam);

  texture_names().forEach((name, i) => $("aug-class").add(new Option(name, i)));
  for (const id of ["aug-class", "aug-rot", "aug-shift", "aug-hflip", "aug-vflip", "aug-draw"]) {
    $(id).addEventListener("input", drawAugment);
  }
  $("aug-next").addEventListener("click", () => {
    $("aug-draw").value = Number($("aug-draw").value) + 1;
    drawAugment();
  });

  buildCounts();
  drawCam();
  drawAugment();
  drawReport();
}

main();
