"""Small deterministic programs used by the semantic-preservation tests.

Each exports ``main`` returning an integer and leaves state in memory or
globals, so a runtime comparison covers more than the return value.
"""

ARITH_LOOP = """
(module
  (memory (export "memory") 1)
  (func (export "main") (result i32)
    (local $i i32) (local $acc i32)
    (loop $l
      (local.set $acc (i32.add (local.get $acc)
        (i32.mul (local.get $i) (i32.add (local.get $i) (i32.const 3)))))
      (i32.store (i32.shl (i32.and (local.get $i) (i32.const 63)) (i32.const 2)) (local.get $acc))
      (local.set $i (i32.add (local.get $i) (i32.const 1)))
      (br_if $l (i32.lt_u (local.get $i) (i32.const 1000))))
    (local.get $acc)))
"""

HASH_KERNEL = """
(module
  (memory (export "memory") 1)
  (global $h (export "h") (mut i64) (i64.const 0))
  (func $mix (param $x i32) (param $y i32) (result i32)
    (i32.rotl (i32.xor (i32.add (local.get $x) (local.get $y)) (i32.const 0x9e3779b9))
              (i32.const 13)))
  (func (export "main") (result i32)
    (local $i i32) (local $a i32) (local $b i32)
    (local.set $a (i32.const 0x12345678))
    (local.set $b (i32.const 0x0badf00d))
    (block $done
      (loop $l
        (br_if $done (i32.ge_u (local.get $i) (i32.const 4096)))
        (local.set $a (call $mix (local.get $a) (local.get $b)))
        (local.set $b (i32.xor (local.get $b) (i32.shr_u (local.get $a) (i32.const 7))))
        (i32.store offset=16 (i32.and (local.get $i) (i32.const 0xfffc)) (local.get $a))
        (global.set $h (i64.add (global.get $h)
          (i64.mul (i64.extend_i32_u (local.get $a)) (i64.const 0x100000001b3))))
        (local.set $i (i32.add (local.get $i) (i32.const 4)))
        (br $l)))
    (i32.xor (local.get $a) (local.get $b))))
"""

RECURSION = """
(module
  (global $calls (export "calls") (mut i32) (i32.const 0))
  (func $fib (param $n i32) (result i32)
    (global.set $calls (i32.add (global.get $calls) (i32.const 1)))
    (if (result i32) (i32.lt_s (local.get $n) (i32.const 2))
      (then (local.get $n))
      (else (i32.add (call $fib (i32.sub (local.get $n) (i32.const 1)))
                     (call $fib (i32.sub (local.get $n) (i32.const 2)))))))
  (func $ack (param $m i32) (param $n i32) (result i32)
    (if (result i32) (i32.eqz (local.get $m))
      (then (i32.add (local.get $n) (i32.const 1)))
      (else (if (result i32) (i32.eqz (local.get $n))
        (then (call $ack (i32.sub (local.get $m) (i32.const 1)) (i32.const 1)))
        (else (call $ack (i32.sub (local.get $m) (i32.const 1))
                         (call $ack (local.get $m) (i32.sub (local.get $n) (i32.const 1)))))))))
  (func (export "main") (result i32)
    (i32.add (call $fib (i32.const 18)) (call $ack (i32.const 2) (i32.const 3)))))
"""

FLOAT_SERIES = """
(module
  (global $last (export "last") (mut f64) (f64.const 0))
  (func (export "main") (result i32)
    (local $k i32) (local $s f64) (local $t f32)
    (loop $l
      (local.set $s (f64.add (local.get $s)
        (f64.div (f64.const 4) (f64.convert_i32_s
          (i32.add (i32.mul (local.get $k) (i32.const 2)) (i32.const 1))))))
      (local.set $s (f64.neg (local.get $s)))
      (local.set $t (f32.add (local.get $t) (f32.sqrt (f32.convert_i32_u (local.get $k)))))
      (local.set $k (i32.add (local.get $k) (i32.const 1)))
      (br_if $l (i32.lt_u (local.get $k) (i32.const 500))))
    (global.set $last (local.get $s))
    (i32.add (i32.trunc_sat_f64_s (f64.mul (local.get $s) (f64.const 1e6)))
             (i32.trunc_f32_s (local.get $t)))))
"""

BUBBLE_SORT = """
(module
  (memory (export "memory") 1)
  (func $fill
    (local $i i32) (local $x i32)
    (local.set $x (i32.const 17))
    (loop $l
      (local.set $x (i32.rem_u (i32.add (i32.mul (local.get $x) (i32.const 1103515245))
                                        (i32.const 12345)) (i32.const 100000)))
      (i32.store (i32.shl (local.get $i) (i32.const 2)) (local.get $x))
      (local.set $i (i32.add (local.get $i) (i32.const 1)))
      (br_if $l (i32.lt_u (local.get $i) (i32.const 64)))))
  (func (export "main") (result i32)
    (local $i i32) (local $j i32) (local $a i32) (local $b i32) (local $swaps i32)
    (call $fill)
    (block $outer_done
      (loop $outer
        (br_if $outer_done (i32.ge_u (local.get $i) (i32.const 64)))
        (local.set $j (i32.const 0))
        (block $inner_done
          (loop $inner
            (br_if $inner_done (i32.ge_u (local.get $j) (i32.sub (i32.const 63) (local.get $i))))
            (local.set $a (i32.load (i32.shl (local.get $j) (i32.const 2))))
            (local.set $b (i32.load offset=4 (i32.shl (local.get $j) (i32.const 2))))
            (if (i32.gt_u (local.get $a) (local.get $b))
              (then
                (i32.store (i32.shl (local.get $j) (i32.const 2)) (local.get $b))
                (i32.store offset=4 (i32.shl (local.get $j) (i32.const 2)) (local.get $a))
                (local.set $swaps (i32.add (local.get $swaps) (i32.const 1)))))
            (local.set $j (i32.add (local.get $j) (i32.const 1)))
            (br $inner)))
        (local.set $i (i32.add (local.get $i) (i32.const 1)))
        (br $outer)))
    (memory.fill (i32.const 1024) (i32.const 7) (i32.const 16))
    (i32.add (local.get $swaps) (i32.load (i32.const 0)))))
"""

PROGRAMS = {
    "arith_loop": ARITH_LOOP,
    "hash_kernel": HASH_KERNEL,
    "recursion": RECURSION,
    "float_series": FLOAT_SERIES,
    "bubble_sort": BUBBLE_SORT,
}
