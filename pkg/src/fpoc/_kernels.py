"""Compiled inner loops shared by the executor and the learner.

Option indices follow the package convention: ``0..k-1`` adjustable,
``k + a`` primitive action ``a``.  Initiation sets are boolean masks over
all ``k + |A|`` indices.
"""
import math

import numpy as np
from numba import njit

CLAMP = 1e-12
CLIP_MAX = 0
CLIP_MIN = 1
BRANCH_SHARED = 0
BRANCH_PER_OPTION = 1


@njit(cache=True)
def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


@njit(cache=True)
def clamp01(p):
    return min(max(p, CLAMP), 1.0 - CLAMP)


@njit(cache=True)
def sample_index(p, u):
    acc = 0.0
    last = 0
    for j in range(p.shape[0]):
        if p[j] > 0.0:
            acc += p[j]
            last = j
            if u < acc:
                return j
    return last


@njit(cache=True)
def softmax_into(w, out):
    m = w[0]
    for a in range(1, w.shape[0]):
        if w[a] > m:
            m = w[a]
    z = 0.0
    for a in range(w.shape[0]):
        out[a] = math.exp(w[a] - m)
        z += out[a]
    for a in range(w.shape[0]):
        out[a] /= z


@njit(cache=True)
def sample_omega(interest_row, k, u, mask):
    """Adjustable ``x`` joins when ``u[x] < interest_row[x]``; primitives always join."""
    for x in range(k):
        mask[x] = u[x] < interest_row[x]
    for h in range(k, mask.shape[0]):
        mask[h] = True


@njit(cache=True)
def set_value(q_row, mask, eps, extra, drop):
    """Expected ``Q`` under the epsilon-greedy meta-policy on ``mask``.

    ``extra`` (or -1) is added to and ``drop`` (or -1) removed from the set.
    Ties share the greedy mass, so the greedy part contributes the max.
    """
    best = -np.inf
    total = 0.0
    count = 0
    for h in range(q_row.shape[0]):
        member = (mask[h] or h == extra) and h != drop
        if member:
            v = q_row[h]
            total += v
            count += 1
            if v > best:
                best = v
    return (1.0 - eps) * best + eps * total / count


@njit(cache=True)
def estimate_v(q_row, interest_row, mask, k, eps, cbar):
    if k == 0:
        return set_value(q_row, mask, eps, -1, -1)
    acc = 0.0
    cost = 0.0
    for x in range(k):
        i = interest_row[x]
        acc += i * set_value(q_row, mask, eps, x, -1) + (1.0 - i) * set_value(q_row, mask, eps, -1, x)
        cost += i
    return acc / k - cbar * cost


@njit(cache=True)
def estimate_m(q_row, interest_row, mask, k, eps, cbar, out):
    for x in range(k):
        i = interest_row[x]
        out[x] = i * (1.0 - i) * (set_value(q_row, mask, eps, x, -1) - set_value(q_row, mask, eps, -1, x) - cbar)


@njit(cache=True)
def choose_option(q_row, mask, eps, u_explore, u_pick):
    """Epsilon-greedy draw over the members of ``mask``; ties split uniformly."""
    H = q_row.shape[0]
    if u_explore < eps:
        count = 0
        for h in range(H):
            if mask[h]:
                count += 1
        target = min(int(u_pick * count), count - 1)
        for h in range(H):
            if mask[h]:
                if target == 0:
                    return h
                target -= 1
    best = -np.inf
    for h in range(H):
        if mask[h] and q_row[h] > best:
            best = q_row[h]
    count = 0
    for h in range(H):
        if mask[h] and q_row[h] == best:
            count += 1
    target = min(int(u_pick * count), count - 1)
    for h in range(H):
        if mask[h] and q_row[h] == best:
            if target == 0:
                return h
            target -= 1
    return -1


@njit(cache=True, error_model="numpy")
def learner_steps(
    uniforms, next_state, reward, prob, terminal, d0_cdf, gamma,
    q, w_pi, w_beta, w_int, k, alpha, eps, cbar, eta, learn_interest, clip_mode,
    branch_mode, ctx,
):
    """Run ``len(uniforms)`` loop bodies of the option-critic update.

    ``ctx`` is a float64 vector ``[task, state, option, beta_prev, steps,
    episodes]``; ``option`` is -1 when a new option must be chosen.  Each
    row of ``uniforms`` holds ``2k + 7`` draws, consumed in a fixed layout
    so that runs are reproducible independent of blocking.

    With ``branch_mode == BRANCH_SHARED`` every option's target follows the
    termination draw of the executing option; with ``BRANCH_PER_OPTION``
    the same uniform is compared against each option's own termination
    probability at the next state.
    """
    N, S, A, K = prob.shape
    H = k + A
    task = int(ctx[0])
    s = int(ctx[1])
    cur = int(ctx[2])
    beta_prev = ctx[3]
    mask = np.zeros(H, dtype=np.bool_)
    mask2 = np.zeros(H, dtype=np.bool_)
    i_s = np.ones(H)
    i_s2 = np.ones(H)
    delta = np.zeros(H)
    pi_buf = np.zeros(A)
    m_buf = np.zeros(max(k, 1))
    for row in range(uniforms.shape[0]):
        u = uniforms[row]
        for x in range(k):
            i_s[x] = sigmoid(w_int[s, x])
        sample_omega(i_s, k, u[0:k], mask)
        if cur < 0:
            h_sel = choose_option(q[task, s], mask, eps, u[k], u[k + 1])
        else:
            h_sel = cur
        if h_sel < k:
            softmax_into(w_pi[s, h_sel], pi_buf)
            a_t = sample_index(pi_buf, u[k + 2])
        else:
            a_t = h_sel - k
        j = sample_index(prob[task, s, a_t], u[k + 3])
        s2 = next_state[task, s, a_t, j]
        r = reward[task, s, a_t, j]
        z = 1.0 if terminal[task, s2] else 0.0

        for x in range(k):
            i_s2[x] = sigmoid(w_int[s2, x])
        sample_omega(i_s2, k, u[k + 4:2 * k + 4], mask2)
        v2 = estimate_v(q[task, s2], i_s2, mask2, k, eps, cbar)
        beta = sigmoid(w_beta[s2, h_sel]) if h_sel < k else 1.0
        fire = u[2 * k + 4] < beta
        for h in range(H):
            if branch_mode == BRANCH_SHARED:
                fire_h = fire
            else:
                fire_h = u[2 * k + 4] < (sigmoid(w_beta[s2, h]) if h < k else 1.0)
            boot = v2 if fire_h else q[task, s2, h]
            delta[h] = r - q[task, s, h] + gamma * (1.0 - z) * boot

        if h_sel < k:
            softmax_into(w_pi[s, h_sel], pi_buf)
            ent = 0.0
            for a in range(A):
                ent -= pi_buf[a] * math.log(clamp01(pi_buf[a]))
            for a in range(A):
                ind = 1.0 if a == a_t else 0.0
                w_pi[s, h_sel, a] += alpha * ((ind - pi_buf[a]) * delta[h_sel]
                                              - eta * pi_buf[a] * (math.log(clamp01(pi_buf[a])) + ent))
            bc = clamp01(beta)
            w_beta[s2, h_sel] += alpha * gamma * (z - 1.0) * beta * (1.0 - beta) * (
                q[task, s2, h_sel] - v2 - eta * math.log((1.0 - bc) / bc))

        if learn_interest and k > 0:
            estimate_m(q[task, s], i_s, mask, k, eps, cbar, m_buf)
            for x in range(k):
                i = i_s[x]
                ic = clamp01(i)
                w_int[s, x] += alpha * gamma * beta_prev * (m_buf[x] + eta * i * (1.0 - i) * math.log((1.0 - ic) / ic))

        # Behaviour probability of the taken action under the selected option.
        if h_sel < k:
            softmax_into(w_pi[s, h_sel], pi_buf)
            p_sel = pi_buf[a_t]
        else:
            p_sel = 1.0
        for h in range(H):
            if h < k:
                softmax_into(w_pi[s, h], pi_buf)
                p_h = pi_buf[a_t]
            else:
                p_h = 1.0 if h - k == a_t else 0.0
            ratio = p_h / p_sel
            if clip_mode == CLIP_MAX:
                rho = max(1.0, ratio)
            else:
                rho = min(1.0, ratio)
            q[task, s, h] += alpha * rho * delta[h]

        beta_prev = beta
        cur = -1 if fire else h_sel
        ctx[4] += 1.0
        if z == 1.0:
            task = min(int(u[2 * k + 5] * N), N - 1)
            s = sample_index(d0_cdf, u[2 * k + 6])
            beta_prev = 1.0
            cur = -1
            ctx[5] += 1.0
        else:
            s = s2
    ctx[0] = task
    ctx[1] = s
    ctx[2] = cur
    ctx[3] = beta_prev


@njit(cache=True)
def rollout_episodes(
    seed, n_episodes, tasks, next_state, reward, prob, terminal, d0, gamma,
    pi, beta, interest, k, q, eps, max_steps, out,
):
    """Call-and-return episodes; ``out[e] = [return, decisions, cost, length, truncated, task]``.

    ``tasks`` lists the task ids to draw from uniformly.  ``cost`` is the
    summed initiation-set size over decision points.
    """
    np.random.seed(seed)
    H = pi.shape[1]
    mask = np.zeros(H, dtype=np.bool_)
    for e in range(n_episodes):
        task = tasks[min(int(np.random.random() * tasks.shape[0]), tasks.shape[0] - 1)]
        s = sample_index(d0, np.random.random())
        g = 0.0
        disc = 1.0
        decisions = 0
        cost = 0.0
        t = 0
        truncated = 0.0
        cur = -1
        if not terminal[task, s]:
            while True:
                if cur < 0:
                    for h in range(H):
                        mask[h] = np.random.random() < interest[s, h] if h < k else True
                    size = 0
                    for h in range(H):
                        if mask[h]:
                            size += 1
                    cur = choose_option(q[task, s], mask, eps, np.random.random(), np.random.random())
                    decisions += 1
                    cost += size
                a = sample_index(pi[s, cur], np.random.random())
                j = sample_index(prob[task, s, a], np.random.random())
                s2 = next_state[task, s, a, j]
                g += disc * reward[task, s, a, j]
                disc *= gamma
                t += 1
                if terminal[task, s2]:
                    break
                if t >= max_steps:
                    truncated = 1.0
                    break
                if np.random.random() < beta[s2, cur]:
                    cur = -1
                s = s2
        out[e, 0] = g
        out[e, 1] = decisions
        out[e, 2] = cost
        out[e, 3] = t
        out[e, 4] = truncated
        out[e, 5] = task


@njit(cache=True)
def estimate_batch(q_row, interest_row, masks, k, eps, cbar, v_out, m_out):
    """``estimate_v`` and ``estimate_m`` for every row of ``masks``."""
    buf = np.zeros(max(k, 1))
    for j in range(masks.shape[0]):
        v_out[j] = estimate_v(q_row, interest_row, masks[j], k, eps, cbar)
        estimate_m(q_row, interest_row, masks[j], k, eps, cbar, buf)
        for x in range(k):
            m_out[j, x] = buf[x]
