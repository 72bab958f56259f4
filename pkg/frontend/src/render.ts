// DOM rendering: the view is rebuilt from the session snapshot on every
// change, so the UI is a pure function of server responses plus the
// stored token.

import { PolygonGeometry, WardDescriptor } from './api.js';
import { Choice, JudgeSession, SessionView } from './session.js';

export function mount(root: HTMLElement, session: JudgeSession): void {
  session.onChange((view) => render(root, session, view));
  render(root, session, session.view());
}

function render(root: HTMLElement, session: JudgeSession, view: SessionView): void {
  root.replaceChildren();
  root.appendChild(counterBar(view));
  const state = view.state;
  if (state.phase === 'loading') {
    root.appendChild(message('Loading…', 'status'));
    return;
  }
  if (state.phase === 'done' || state.phase === 'closed') {
    root.appendChild(message(state.reason, 'completion'));
    return;
  }
  if (state.phase === 'error') {
    root.appendChild(message(`Something went wrong: ${state.reason}`, 'error-banner'));
    return;
  }

  const question = document.createElement('p');
  question.className = 'question';
  question.textContent = 'Which of the pair has a higher rate?';
  root.appendChild(question);

  const cards = document.createElement('div');
  cards.className = 'cards';
  cards.appendChild(wardCard(state.pair.left, 'left'));
  cards.appendChild(wardCard(state.pair.right, 'right'));
  root.appendChild(cards);

  const controls = document.createElement('div');
  controls.className = 'controls';
  const buttons: Array<[Choice, string]> = [
    ['left', `${state.pair.left.name} is higher`],
    ['right', `${state.pair.right.name} is higher`],
    ['skip', 'Skip this comparison'],
    ['unknown-left', `I don't know ${state.pair.left.name}`],
    ['unknown-right', `I don't know ${state.pair.right.name}`],
  ];
  for (const [choice, label] of buttons) {
    const button = document.createElement('button');
    button.dataset.choice = choice;
    button.textContent = label;
    button.disabled = session.isBusy();
    button.addEventListener('click', () => {
      void session.answer(choice);
    });
    controls.appendChild(button);
  }
  root.appendChild(controls);
}

function counterBar(view: SessionView): HTMLElement {
  const bar = document.createElement('div');
  bar.className = 'counter';
  const max = view.recommendedMaximum;
  bar.textContent = max === null
    ? `Comparisons made: ${view.comparisons}`
    : `Comparisons made: ${view.comparisons} (recommended maximum ${max})`;
  return bar;
}

function message(text: string, className: string): HTMLElement {
  const el = document.createElement('p');
  el.className = className;
  el.textContent = text;
  return el;
}

function wardCard(ward: WardDescriptor, side: 'left' | 'right'): HTMLElement {
  const card = document.createElement('figure');
  card.className = `ward-card ${side}`;
  card.dataset.wardId = ward.id;
  if (ward.geometry) {
    card.appendChild(polygonSvg(ward.geometry));
  }
  const caption = document.createElement('figcaption');
  caption.textContent = ward.name;
  card.appendChild(caption);
  return card;
}

/** Draw the ward outline client-side; no tile service is involved. */
export function polygonSvg(geometry: PolygonGeometry): SVGSVGElement {
  const rings = geometry.type === 'Polygon'
    ? (geometry.coordinates as number[][][])
    : (geometry.coordinates as number[][][][]).flat();
  const points = rings.flat();
  const xs = points.map((p) => p[0]);
  const ys = points.map((p) => p[1]);
  const minX = Math.min(...xs);
  const maxX = Math.max(...xs);
  const minY = Math.min(...ys);
  const maxY = Math.max(...ys);
  const span = Math.max(maxX - minX, maxY - minY) || 1;
  const scale = 90 / span;
  const toView = ([x, y]: number[]) =>
    `${(5 + (x - minX) * scale).toFixed(2)},${(95 - (y - minY) * scale).toFixed(2)}`;

  const svg = document.createElementNS('http://www.w3.org/2000/svg', 'svg');
  svg.setAttribute('viewBox', '0 0 100 100');
  svg.setAttribute('role', 'img');
  for (const ring of rings) {
    const path = document.createElementNS('http://www.w3.org/2000/svg', 'path');
    path.setAttribute('d', `M ${ring.map(toView).join(' L ')} Z`);
    path.setAttribute('class', 'ward-outline');
    svg.appendChild(path);
  }
  return svg;
}
