// Parser for the task tree's line-oriented text format:
//   <2*depth spaces><id> <title> [<STATUS>]
//   <2*depth+2 spaces>- <finding>

export type NodeStatus = 'TODO' | 'IN-PROGRESS' | 'DONE' | 'FAILED';

export interface PttViewNode {
  id: string;
  title: string;
  status: NodeStatus;
  depth: number;
  findings: string[];
  children: PttViewNode[];
}

const NODE_LINE = /^( *)([1-9]\d*(?:\.[1-9]\d*)*) (.+) \[(TODO|IN-PROGRESS|DONE|FAILED)\]$/;
const FINDING_LINE = /^( *)- (.*)$/;

export function parsePtt(text: string): PttViewNode[] {
  const roots: PttViewNode[] = [];
  const byId = new Map<string, PttViewNode>();
  let current: PttViewNode | null = null;
  for (const rawLine of text.split('\n')) {
    if (rawLine.trim() === '') continue;
    const nodeMatch = NODE_LINE.exec(rawLine);
    if (nodeMatch) {
      const id = nodeMatch[2];
      const node: PttViewNode = {
        id,
        title: nodeMatch[3],
        status: nodeMatch[4] as NodeStatus,
        depth: (id.match(/\./g) ?? []).length,
        findings: [],
        children: [],
      };
      const parentId = id.includes('.') ? id.slice(0, id.lastIndexOf('.')) : '';
      const parent = byId.get(parentId);
      if (parent) parent.children.push(node);
      else roots.push(node);
      byId.set(id, node);
      current = node;
      continue;
    }
    const findingMatch = FINDING_LINE.exec(rawLine);
    if (findingMatch && current) {
      current.findings.push(findingMatch[2]);
      continue;
    }
    // unrecognized line: ignore rather than fail, the server owns the format
  }
  return roots;
}

export function countNodes(roots: PttViewNode[]): number {
  let count = 0;
  const stack = [...roots];
  while (stack.length) {
    const node = stack.pop()!;
    count += 1;
    stack.push(...node.children);
  }
  return count;
}

export function countFindings(roots: PttViewNode[]): number {
  let count = 0;
  const stack = [...roots];
  while (stack.length) {
    const node = stack.pop()!;
    count += node.findings.length;
    stack.push(...node.children);
  }
  return count;
}

const STATUS_GLYPH: Record<NodeStatus, string> = {
  TODO: '[ ]',
  'IN-PROGRESS': '[>]',
  DONE: '[x]',
  FAILED: '[!]',
};

/** Plain-text rendering used by the timeline view and tests. */
export function renderAscii(roots: PttViewNode[]): string {
  const lines: string[] = [];
  const walk = (node: PttViewNode) => {
    lines.push(`${'  '.repeat(node.depth)}${STATUS_GLYPH[node.status]} ${node.id} ${node.title}`);
    for (const finding of node.findings) {
      lines.push(`${'  '.repeat(node.depth + 1)}- ${finding}`);
    }
    node.children.forEach(walk);
  };
  roots.forEach(walk);
  return lines.join('\n');
}
