import { StudyApi } from './api.js';
import { mount } from './render.js';
import { JudgeSession } from './session.js';

const params = new URLSearchParams(window.location.search);
const studyId = params.get('study');
const root = document.getElementById('app');

if (!root) {
  throw new Error('missing #app element');
} else if (!studyId) {
  root.textContent = 'This link is missing its study id.';
} else {
  const api = new StudyApi(params.get('api') ?? '');
  const session = new JudgeSession(api, studyId);
  mount(root, session);
  void session.enrol();
}
