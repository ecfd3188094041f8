// Thin DOM layer: paints a RenderModel into an SVG pane and its legend.

import { RenderModel, Viewport, cellTooltip, projectCells } from "./layers.js";
import { LayerCell } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export function paintPane(
  svg: SVGSVGElement,
  model: RenderModel,
  cells: LayerCell[],
  vp: Viewport,
): void {
  svg.innerHTML = "";
  svg.setAttribute("viewBox", `0 0 ${vp.width} ${vp.height}`);
  const rects = projectCells(model.cells, vp);
  model.cells.forEach((cell, i) => {
    const r = rects[i];
    const el = document.createElementNS(SVG_NS, "rect");
    el.setAttribute("x", r.x.toFixed(2));
    el.setAttribute("y", r.y.toFixed(2));
    el.setAttribute("width", Math.max(r.w - 0.6, 0.5).toFixed(2));
    el.setAttribute("height", Math.max(r.h - 0.6, 0.5).toFixed(2));
    el.setAttribute("fill", cell.color);
    el.setAttribute("data-cell", String(cell.cell));
    const title = document.createElementNS(SVG_NS, "title");
    title.textContent = cellTooltip(cells[i]);
    el.appendChild(title);
    svg.appendChild(el);
  });
}

export function paintLegend(container: HTMLElement, model: RenderModel): void {
  container.innerHTML = "";
  for (const [color, label] of model.legend) {
    const item = document.createElement("span");
    item.className = "legend-item";
    const swatch = document.createElement("span");
    swatch.className = "legend-swatch";
    swatch.style.background = color;
    item.appendChild(swatch);
    item.appendChild(document.createTextNode(label));
    container.appendChild(item);
  }
}
