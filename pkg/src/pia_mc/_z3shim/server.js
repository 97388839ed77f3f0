#!/usr/bin/env node
// SMT-LIB 2 front end for the z3-solver WASM build.
// Reads commands from stdin, evaluates each complete s-expression,
// writes solver output to stdout. Behaves like `z3 -in -smt2`.
'use strict';

function resolveZ3() {
  const paths = [];
  if (process.env.PIA_MC_NPM_DIR) paths.push(process.env.PIA_MC_NPM_DIR);
  paths.push(process.cwd(), __dirname);
  const os = require('os');
  const path = require('path');
  paths.push(path.join(os.homedir(), '.cache', 'pia-mc'));
  for (const p of paths) {
    try {
      return require(require.resolve('z3-solver', { paths: [p] }));
    } catch (e) { /* keep looking */ }
  }
  process.stderr.write('server.js: cannot find the z3-solver npm package; ' +
    'run `npm install --prefix ~/.cache/pia-mc z3-solver` or set PIA_MC_NPM_DIR\n');
  process.exit(3);
}

async function main() {
  const { init } = resolveZ3();
  const { Z3 } = await init();
  for (const arg of process.argv.slice(2)) {
    const m = /^--timeout-ms=(\d+)$/.exec(arg);
    if (m) Z3.global_param_set('timeout', m[1]);
  }
  const cfg = Z3.mk_config();
  const ctx = Z3.mk_context(cfg);

  let buf = '';
  let pos = 0;
  let depth = 0;
  let mode = 0; // 0 plain, 1 "string", 2 |symbol|, 3 ; comment
  let chain = Promise.resolve();

  function enqueue(cmd) {
    chain = chain.then(async () => {
      let out;
      try {
        out = await Z3.eval_smtlib2_string(ctx, cmd);
      } catch (e) {
        out = '(error "' + String(e && e.message || e).replace(/"/g, "'") + '")';
      }
      if (out && out.trim().length) {
        process.stdout.write(out.endsWith('\n') ? out : out + '\n');
      }
      if (/\(\s*exit\s*\)\s*$/.test(cmd)) process.exit(0);
    });
  }

  function feed(chunk) {
    buf += chunk;
    while (pos < buf.length) {
      const c = buf[pos];
      if (mode === 1) {
        if (c === '"') {
          if (buf[pos + 1] === '"') { pos += 2; continue; }
          mode = 0;
        }
        pos++;
      } else if (mode === 2) {
        if (c === '|') mode = 0;
        pos++;
      } else if (mode === 3) {
        if (c === '\n') mode = 0;
        pos++;
      } else if (c === ';') { mode = 3; pos++; }
      else if (c === '"') { mode = 1; pos++; }
      else if (c === '|') { mode = 2; pos++; }
      else if (c === '(') { depth++; pos++; }
      else if (c === ')') {
        depth--; pos++;
        if (depth <= 0) {
          enqueue(buf.slice(0, pos));
          buf = buf.slice(pos);
          pos = 0; depth = 0;
        }
      } else pos++;
    }
  }

  process.stdin.setEncoding('utf8');
  process.stdin.on('data', feed);
  process.stdin.on('end', () => { chain.then(() => process.exit(0)); });
}

main();
